#include "fivm/apps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fivm {

int CovarianceQuery::slot_of(const std::string& name) const {
  for (std::size_t i = 0; i < slot_names.size(); ++i)
    if (slot_names[i] == name) return static_cast<int>(i);
  throw Error("no covariance slot for variable " + name);
}

CovarianceQuery build_covariance_query(const std::vector<std::pair<std::string, std::vector<std::string>>>& rels,
                                       const std::vector<Feature>& features,
                                       const std::vector<std::pair<std::string, ValueKind>>& value_kinds) {
  CovarianceQuery cq;
  Query& q = cq.query;
  for (const auto& [name, vs] : rels) q.add_relation(name, vs);
  for (const auto& f : features) {
    if (!q.has_var(f.var)) throw Error("feature " + f.var + " is not a query variable");
    if (std::find(cq.slot_names.begin(), cq.slot_names.end(), f.var) != cq.slot_names.end())
      throw Error("feature " + f.var + " declared twice");
    if (f.kind == FeatureKind::Categorical) {
      cq.generalized = true;
      q.vars[q.var(f.var)].kind = ValueKind::Categorical;
    }
    cq.slot_names.push_back(f.var);
    cq.slot_vars.push_back(q.var(f.var));
    cq.slot_kinds.push_back(f.kind);
  }
  for (const auto& [name, kind] : value_kinds) q.vars[q.var(name)].kind = kind;
  if (features.empty()) throw Error("covariance query needs at least one feature");
  q.ring = RingSpec::covariance(cq.degree(), cq.generalized ? BaseKind::Relational : BaseKind::Real);
  q.set_free({});
  for (std::size_t i = 0; i < features.size(); ++i) {
    LiftMode m = features[i].kind == FeatureKind::Continuous ? LiftMode::CovarianceContinuous
                                                             : LiftMode::CovarianceCategorical;
    q.set_lift(features[i].var, m, static_cast<int>(i));
  }
  q.complete_lifts();
  q.validate();
  return cq;
}

std::vector<std::vector<double>> covariance_matrix(const ContinuousCovariance& cov, int m) {
  std::vector<std::vector<double>> a(m + 1, std::vector<double>(m + 1, 0.0));
  a[0][0] = cov.c;
  for (const auto& [i, x] : cov.s) a[0][i + 1] = a[i + 1][0] = x;
  for (const auto& [k, x] : cov.q) a[k.first + 1][k.second + 1] = a[k.second + 1][k.first + 1] = x;
  return a;
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kConst = -2;  // synthesized intercept

std::vector<int> regression_slots(const RegressionConfig& cfg) {
  if (cfg.label < 0) throw Error("regression needs a label slot");
  std::vector<int> slots;
  if (cfg.intercept_slot >= 0) slots.push_back(cfg.intercept_slot);
  else if (cfg.intercept) slots.push_back(kConst);
  for (int f : cfg.features) {
    if (f == cfg.label) throw Error("the label cannot also be a feature");
    if (f < 0) throw Error("negative feature slot");
    slots.push_back(f);
  }
  slots.push_back(cfg.label);
  return slots;
}

double cov_entry(const ContinuousCovariance& cov, int a, int b) {
  if (a == kConst && b == kConst) return cov.c;
  if (a == kConst || b == kConst) {
    const double* s = cov.s_at(a == kConst ? b : a);
    return s ? *s : 0.0;
  }
  const double* x = cov.q_at(a, b);
  return x ? *x : 0.0;
}

}  // namespace

std::vector<std::vector<double>> regression_matrix(const ContinuousCovariance& cov, const RegressionConfig& cfg) {
  if (!(cov.c > 0)) throw Error("regression over an empty training set");
  auto slots = regression_slots(cfg);
  std::size_t n = slots.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = cov_entry(cov, slots[i], slots[j]) / cov.c;
  return a;
}

double safe_step_size(const ContinuousCovariance& cov, const RegressionConfig& cfg) {
  auto a = regression_matrix(cov, cfg);
  double tr = 0;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) tr += a[i][i];
  return tr > 0 ? 1.0 / tr : 1.0;
}

RegressionResult train_linear_regression(const ContinuousCovariance& cov, const RegressionConfig& cfg,
                                         const std::vector<double>* previous) {
  if (!(cfg.step > 0)) throw Error("step size must be positive");
  if (!(cfg.threshold > 0)) throw Error("convergence threshold must be positive");
  auto a = regression_matrix(cov, cfg);
  std::size_t n = a.size();
  std::size_t k = n - 1;  // free parameters

  RegressionResult r;
  r.theta.assign(n, 0.0);
  if (cfg.warm_start && previous) {
    if (previous->size() != n) throw Error("warm-start parameters have the wrong length");
    r.theta = *previous;
  }
  r.theta[k] = -1.0;

  std::vector<double> grad(k);
  double prev_norm = std::numeric_limits<double>::infinity();
  int rising = 0;
  for (int it = 0;; ++it) {
    double norm2 = 0;
    for (std::size_t i = 0; i < k; ++i) {
      double g = 0;
      for (std::size_t j = 0; j < n; ++j) g += a[i][j] * r.theta[j];
      grad[i] = g;
      norm2 += g * g;
    }
    double norm = std::sqrt(norm2);
    r.iterations = it;
    r.gradient_norm = norm;
    if (!std::isfinite(norm)) {
      r.diverged = true;
      r.diagnostics = "gradient became non-finite at iteration " + std::to_string(it);
      return r;
    }
    if (norm < cfg.threshold) {
      r.converged = true;
      return r;
    }
    rising = norm > prev_norm ? rising + 1 : 0;
    if (rising >= 10) {
      r.diverged = true;
      r.diagnostics = "gradient norm rose for 10 consecutive steps (now " + fmt_double(norm) + " at iteration " +
                      std::to_string(it) + "); step size " + fmt_double(cfg.step) + " is too large";
      return r;
    }
    prev_norm = norm;
    if (it >= cfg.max_iterations) {
      r.diagnostics = "stopped after " + std::to_string(it) + " iterations, gradient norm " + fmt_double(norm);
      return r;
    }
    for (std::size_t i = 0; i < k; ++i) r.theta[i] -= cfg.step * grad[i];
  }
}

// ---------------------------------------------------------------------------

MIMatrix mutual_information_matrix(const GeneralCovariance& cov, const std::vector<VarId>& slot_vars) {
  int m = static_cast<int>(slot_vars.size());
  const double* cp = cov.c.find(GTuple{});
  double total = cp ? *cp : 0.0;
  if (cov.c.size() != (cp ? 1u : 0u)) throw Error("count entry carries attributes");
  if (!(total > 0)) throw Error("mutual information over an empty dataset");

  auto marginal = [&](int i) -> const RelationalPayload<double>& {
    static const RelationalPayload<double> empty;
    const auto* p = cov.s_at(i);
    if (!p) return empty;
    for (const auto& [k, x] : p->entries)
      if (k.size() != 1 || k[0].first != slot_vars[i]) throw Error("slot " + std::to_string(i) + " is not categorical");
    return *p;
  };

  MIMatrix mi{m, std::vector<double>(static_cast<std::size_t>(m) * m, 0.0)};
  for (int i = 0; i < m; ++i) {
    const auto& si = marginal(i);
    for (int j = i + 1; j < m; ++j) {
      const auto& sj = marginal(j);
      const auto* qij = cov.q_at(i, j);
      double sum = 0;
      if (qij) {
        for (const auto& [k, cxy] : qij->entries) {
          if (cxy == 0) continue;
          if (k.size() != 2) throw Error("pairwise counts need two categorical attributes");
          Value xi = 0, xj = 0;
          for (const auto& [var, val] : k) {
            if (var == slot_vars[i]) xi = val;
            else if (var == slot_vars[j]) xj = val;
            else throw Error("pairwise count over an unexpected variable");
          }
          const double* cx = si.find(GTuple{{slot_vars[i], xi}});
          const double* cy = sj.find(GTuple{{slot_vars[j], xj}});
          if (!cx || !cy) throw Error("pairwise count without matching marginal");
          sum += cxy / total * std::log(total * cxy / (*cx * *cy));
        }
      }
      if (sum < 0) sum = 0;  // rounding floor
      mi.at(i, j) = mi.at(j, i) = sum;
    }
  }
  return mi;
}

Value discretize(double x, double lo, double hi, int bins) {
  if (bins < 1) throw Error("bin count must be positive");
  if (!(hi > lo)) return 0;
  double b = std::floor((x - lo) / (hi - lo) * bins);
  return static_cast<Value>(std::clamp(b, 0.0, static_cast<double>(bins - 1)));
}

std::vector<ChowLiuEdge> chow_liu_tree(const MIMatrix& mi) {
  int m = mi.m;
  std::vector<ChowLiuEdge> edges;
  if (m <= 1) return edges;
  std::vector<char> in(m, 0);
  in[0] = 1;
  for (int round = 1; round < m; ++round) {
    ChowLiuEdge best{-1, -1, -std::numeric_limits<double>::infinity()};
    for (int u = 0; u < m; ++u) {
      if (!in[u]) continue;
      for (int v = 0; v < m; ++v) {
        if (in[v]) continue;
        ChowLiuEdge e{std::min(u, v), std::max(u, v), mi.at(u, v)};
        bool better = e.weight > best.weight ||
                      (e.weight == best.weight && std::pair(e.a, e.b) < std::pair(best.a, best.b));
        if (better) best = e;
      }
    }
    in[in[best.a] ? best.b : best.a] = 1;
    edges.push_back(best);
  }
  return edges;
}

double tree_weight(const std::vector<ChowLiuEdge>& edges) {
  double w = 0;
  for (const auto& e : edges) w += e.weight;
  return w;
}

// ---------------------------------------------------------------------------

MatrixChain build_matrix_chain(const std::vector<long long>& dims) {
  if (dims.size() < 3) throw Error("a matrix chain needs at least two matrices");
  for (long long d : dims)
    if (d < 1) throw Error("matrix dimensions must be positive");
  int n = static_cast<int>(dims.size()) - 1;
  std::vector<std::vector<long long>> cost(n, std::vector<long long>(n, 0));
  std::vector<std::vector<int>> split(n, std::vector<int>(n, -1));
  for (int len = 2; len <= n; ++len) {
    for (int i = 0; i + len - 1 < n; ++i) {
      int j = i + len - 1;
      long long best = -1;
      int best_skew = 0;
      for (int k = i; k < j; ++k) {
        long long c = cost[i][k] + cost[k + 1][j] + dims[i] * dims[k + 1] * dims[j + 1];
        int skew = std::abs((k - i + 1) - (j - k));
        if (best < 0 || c < best || (c == best && skew < best_skew)) {
          best = c;
          best_skew = skew;
          split[i][j] = k;
        }
      }
      cost[i][j] = best;
    }
  }

  auto xname = [](int i) { return "X" + std::to_string(i + 1); };
  std::vector<std::pair<std::string, std::vector<std::string>>> rels;
  for (int i = 0; i < n; ++i) rels.push_back({"A" + std::to_string(i + 1), {xname(i), xname(i + 1)}});

  MatrixChain mc;
  mc.query = Query::make(rels, {xname(0), xname(n)}, RingSpec::real());
  mc.cost = cost[0][n - 1];

  auto bracket = [&](auto&& self, int i, int j) -> std::string {
    if (i == j) return "A" + std::to_string(i + 1);
    int k = split[i][j];
    return "(" + self(self, i, k) + self(self, k + 1, j) + ")";
  };
  mc.bracketing = bracket(bracket, 0, n - 1);

  // interior variable X_{k+2} joins matrices k and k+1
  auto interior = [&](auto&& self, int i, int j) -> std::vector<ForestNode> {
    if (i == j) return {};
    int k = split[i][j];
    ForestNode node{xname(k + 1), {}};
    for (auto& c : self(self, i, k)) node.children.push_back(std::move(c));
    for (auto& c : self(self, k + 1, j)) node.children.push_back(std::move(c));
    return {node};
  };
  ForestNode last{xname(n), interior(interior, 0, n - 1)};
  mc.order = {ForestNode{xname(0), {last}}};
  return mc;
}

void mcm_rank_update(Runtime<RealRing>& rt, const Query& q, int i, const Relation<RealRing>& u,
                     const Relation<RealRing>& v) {
  if (i < 0 || i >= static_cast<int>(q.relations.size())) throw Error("matrix index out of range");
  const auto& schema = q.relations[i].schema;
  if (u.schema() != std::vector<VarId>{schema[0]} || v.schema() != std::vector<VarId>{schema[1]})
    throw Error("rank-1 factors must range over the row and column variables of the matrix");
  FactorizedDelta<RealRing> d;
  d.leaf = i;
  d.terms.push_back({u, v});
  rt.update_factorized(d);
}

void mcm_rank_update(Runtime<RealRing>& rt, const Query& q, int i, const std::vector<Relation<RealRing>>& us,
                     const std::vector<Relation<RealRing>>& vs) {
  if (us.size() != vs.size()) throw Error("rank-r update needs as many column as row factors");
  for (std::size_t r = 0; r < us.size(); ++r) mcm_rank_update(rt, q, i, us[r], vs[r]);
}

// ---------------------------------------------------------------------------

namespace {

void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_escape(cells[i]);
  os << '\n';
}

}  // namespace

void write_covariance_csv(std::ostream& os, const ContinuousCovariance& cov, const std::vector<std::string>& names) {
  int m = static_cast<int>(names.size());
  auto a = covariance_matrix(cov, m);
  std::vector<std::string> head{"", "1"};
  head.insert(head.end(), names.begin(), names.end());
  write_row(os, head);
  for (int i = 0; i <= m; ++i) {
    std::vector<std::string> row{i == 0 ? "1" : names[i - 1]};
    for (int j = 0; j <= m; ++j) row.push_back(fmt_double(a[i][j]));
    write_row(os, row);
  }
}

void write_covariance_csv(std::ostream& os, const GeneralCovariance& cov, const CovarianceQuery& cq) {
  const Query& q = cq.query;
  auto side = [&](const GTuple& k, VarId var) {
    for (const auto& [v, x] : k)
      if (v == var) return format_value(x, q.vars[v].kind);
    return std::string();
  };
  write_row(os, {"row", "row_value", "col", "col_value", "value"});
  for (const auto& [k, x] : cov.c.entries) write_row(os, {"1", "", "1", "", fmt_double(x)});
  for (const auto& [i, p] : cov.s)
    for (const auto& [k, x] : p.entries)
      write_row(os, {"1", "", cq.slot_names[i], side(k, cq.slot_vars[i]), fmt_double(x)});
  for (const auto& [ij, p] : cov.q)
    for (const auto& [k, x] : p.entries)
      write_row(os, {cq.slot_names[ij.first], side(k, cq.slot_vars[ij.first]), cq.slot_names[ij.second],
                     side(k, cq.slot_vars[ij.second]), fmt_double(x)});
}

void write_mi_csv(std::ostream& os, const MIMatrix& mi, const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != mi.m) throw Error("name count does not match the MI matrix");
  std::vector<std::string> head{""};
  head.insert(head.end(), names.begin(), names.end());
  write_row(os, head);
  for (int i = 0; i < mi.m; ++i) {
    std::vector<std::string> row{names[i]};
    for (int j = 0; j < mi.m; ++j) row.push_back(fmt_double(mi.at(i, j)));
    write_row(os, row);
  }
}

void write_theta_csv(std::ostream& os, const RegressionResult& r, const RegressionConfig& cfg,
                     const std::vector<std::string>& names) {
  std::vector<std::string> labels;
  if (cfg.intercept_slot >= 0) labels.push_back(names.at(cfg.intercept_slot));
  else if (cfg.intercept) labels.push_back("1");
  for (int f : cfg.features) labels.push_back(names.at(f));
  labels.push_back(names.at(cfg.label));
  if (labels.size() != r.theta.size()) throw Error("parameter count does not match the configuration");
  write_row(os, {"parameter", "value"});
  for (std::size_t i = 0; i < labels.size(); ++i) write_row(os, {labels[i], fmt_double(r.theta[i])});
}

void write_chow_liu_csv(std::ostream& os, const std::vector<ChowLiuEdge>& edges, const std::vector<std::string>& names) {
  write_row(os, {"a", "b", "mutual_information"});
  for (const auto& e : edges) write_row(os, {names.at(e.a), names.at(e.b), fmt_double(e.weight)});
}

}  // namespace fivm
