#include "fivm/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace fivm {

using json = nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string> kEngines = {"fivm", "first_order", "reevaluate"};
const char* const kMetricsHeader = "scenario,engine,batch,tuples,reads,writes,probes,elapsed_ns,enumerated";

// ---------------------------------------------------------------------------
// Scenario files

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw Error(where + ": unknown key '" + k + "'");
}

ValueKind value_kind_from(const std::string& s) {
  if (s == "int") return ValueKind::Int;
  if (s == "real") return ValueKind::Real;
  if (s == "categorical") return ValueKind::Categorical;
  throw Error("unknown variable kind '" + s + "' (int, real, categorical)");
}

BaseKind base_from(const std::string& s) {
  if (s == "integer") return BaseKind::Integer;
  if (s == "real") return BaseKind::Real;
  if (s == "relational") return BaseKind::Relational;
  throw Error("unknown base ring '" + s + "'");
}

RingSpec ring_from(const json& j) {
  if (j.is_string()) {
    std::string k = j.get<std::string>();
    if (k == "integer") return RingSpec::integer();
    if (k == "real") return RingSpec::real();
    if (k == "relational") return RingSpec::relational();
    throw Error("ring '" + k + "' needs an object with its parameters");
  }
  check_keys(j, {"kind", "base", "degree", "tolerance"}, "ring");
  std::string kind = j.at("kind").get<std::string>();
  double tol = j.value("tolerance", 0.0);
  RingSpec r;
  if (kind == "integer") r = RingSpec::integer();
  else if (kind == "real") r = RingSpec::real(tol);
  else if (kind == "relational") r = RingSpec::relational(base_from(j.value("base", "integer")), tol);
  else if (kind == "covariance") r = RingSpec::covariance(j.at("degree").get<int>(), base_from(j.value("base", "real")), tol);
  else throw Error("unknown ring kind '" + kind + "'");
  r.validate();
  return r;
}

ForestNode order_node(const json& j) {
  if (j.is_string()) return {j.get<std::string>(), {}};
  if (!j.is_array() || j.empty() || j.size() > 2 || !j[0].is_string())
    throw Error("order node must be a name or [name, [children...]]");
  ForestNode n{j[0].get<std::string>(), {}};
  if (j.size() == 2) {
    if (!j[1].is_array()) throw Error("children of " + n.var + " must be a list");
    for (const auto& c : j[1]) n.children.push_back(order_node(c));
  }
  return n;
}

}  // namespace

void Scenario::validate() const {
  if (name.empty()) throw Error("scenario needs a name");
  if (relations.empty()) throw Error("scenario " + name + " declares no relations");
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (intvl < 0) throw Error("enumeration interval must be non-negative");
  if (timeout_s < 0) throw Error("timeout must be non-negative");
  for (const auto& r : relations)
    if (r.file.empty()) throw Error("relation " + r.name + " has no data file");
  static const std::set<std::string> apps = {"none", "covariance", "regression", "mutual_information", "chow_liu"};
  if (!apps.count(app.kind)) throw Error("unknown application '" + app.kind + "'");
  if (app.kind != "none" && features.empty()) throw Error("application " + app.kind + " needs covariance features");
}

Scenario parse_scenario(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("scenario is not valid JSON: ") + e.what());
  }
  check_keys(j, {"name", "relations", "variables", "free", "ring", "features", "lifts", "payload_mode", "order", "fds",
                 "tree", "updatable", "batch_size", "seed", "intvl", "sorted", "timeout_s", "app", "metrics"},
             "scenario");
  Scenario s;
  try {
    s.base_dir = base_dir;
    s.name = j.value("name", "");
    for (const auto& r : j.at("relations")) {
      check_keys(r, {"name", "columns", "fields", "file", "payload", "updatable"}, "relation");
      RelationDecl d;
      d.name = r.at("name").get<std::string>();
      d.columns = r.at("columns").get<std::vector<std::string>>();
      d.fields = r.value("fields", std::vector<std::string>{});
      if (!d.fields.empty() && d.fields.size() != d.columns.size())
        throw Error("relation " + d.name + ": fields and columns differ in length");
      d.file = r.value("file", "");
      d.payload_column = r.value("payload", "");
      if (r.contains("updatable")) d.updatable = r["updatable"].get<bool>();
      s.relations.push_back(std::move(d));
    }
    if (j.contains("variables"))
      for (const auto& [k, v] : j["variables"].items()) s.var_kinds[k] = value_kind_from(v.get<std::string>());
    s.free = j.value("free", std::vector<std::string>{});
    if (j.contains("ring")) s.ring = ring_from(j["ring"]);
    if (j.contains("features")) {
      for (const auto& f : j["features"]) {
        check_keys(f, {"var", "kind"}, "feature");
        std::string kind = f.value("kind", "continuous");
        if (kind != "continuous" && kind != "categorical") throw Error("feature kind must be continuous or categorical");
        s.features.push_back({f.at("var").get<std::string>(),
                              kind == "continuous" ? FeatureKind::Continuous : FeatureKind::Categorical});
      }
    }
    if (j.contains("lifts"))
      for (const auto& l : j["lifts"]) {
        check_keys(l, {"var", "mode", "slot"}, "lift");
        s.lifts.emplace_back(l.at("var").get<std::string>(), lift_mode_from_string(l.at("mode").get<std::string>()),
                             l.value("slot", 0));
      }
    std::string pm = j.value("payload_mode", "group_by");
    if (pm == "relational") s.payload_mode = FreeLiftMode::RelationalPayload;
    else if (pm != "group_by") throw Error("payload_mode must be group_by or relational");
    if (j.contains("order")) {
      Forest f;
      for (const auto& n : j["order"]) f.push_back(order_node(n));
      s.order = std::move(f);
    }
    if (j.contains("fds"))
      for (const auto& fd : j["fds"]) {
        check_keys(fd, {"lhs", "rhs"}, "fd");
        s.fds.emplace_back(fd.at("lhs").get<std::vector<std::string>>(), fd.at("rhs").get<std::vector<std::string>>());
      }
    std::string tree = j.value("tree", "auto");
    if (tree == "plain") s.shape = TreeShape::Plain;
    else if (tree == "free_connex") s.shape = TreeShape::FreeConnex;
    else if (tree != "auto") throw Error("tree must be auto, plain or free_connex");
    s.updatable = j.value("updatable", std::vector<std::string>{});
    s.batch_size = j.value("batch_size", 1000);
    s.seed = j.value("seed", std::uint64_t{0});
    s.intvl = j.value("intvl", 0);
    s.sorted = j.value("sorted", false);
    s.timeout_s = j.value("timeout_s", 0.0);
    if (j.contains("app")) {
      const auto& a = j["app"];
      check_keys(a, {"kind", "label", "features", "step", "threshold", "max_iterations", "warm_start"}, "app");
      s.app.kind = a.at("kind").get<std::string>();
      s.app.label = a.value("label", "");
      s.app.features = a.value("features", std::vector<std::string>{});
      s.app.step = a.value("step", 0.0);
      s.app.threshold = a.value("threshold", 1e-9);
      s.app.max_iterations = a.value("max_iterations", 100000);
      s.app.warm_start = a.value("warm_start", true);
    }
    s.metrics = j.value("metrics", "");
  } catch (const json::exception& e) {
    throw Error(std::string("scenario field error: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  fs::path p(path);
  Scenario s = parse_scenario(ss.str(), p.parent_path().empty() ? "." : p.parent_path().string());
  if (s.name.empty()) s.name = p.stem().string();
  return s;
}

// ---------------------------------------------------------------------------
// Query preparation

namespace {

bool relation_updatable(const Scenario& s, const RelationDecl& d) {
  if (d.updatable) return *d.updatable;
  return s.updatable.empty() || std::find(s.updatable.begin(), s.updatable.end(), d.name) != s.updatable.end();
}

}  // namespace

PreparedQuery prepare_query(const Scenario& s) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rels;
  for (const auto& d : s.relations) rels.push_back({d.name, d.columns});
  PreparedQuery pq;
  Query& q = pq.query;
  if (!s.features.empty()) {
    if (!s.free.empty()) throw Error("covariance scenarios aggregate every variable; free must be empty");
    if (s.payload_mode != FreeLiftMode::GroupBy) throw Error("covariance scenarios use group-by payloads");
    std::vector<std::pair<std::string, ValueKind>> kinds(s.var_kinds.begin(), s.var_kinds.end());
    pq.cov = build_covariance_query(rels, s.features, kinds);
    q = pq.cov->query;
  } else {
    for (const auto& [name, cols] : rels) q.add_relation(name, cols);
    for (const auto& [name, kind] : s.var_kinds) {
      if (!q.has_var(name)) throw Error("variable " + name + " does not occur in any relation");
      q.vars[q.var(name)].kind = kind;
    }
    q.ring = s.ring;
    q.free_lift_mode = s.payload_mode;
    q.set_free(s.free);
    for (const auto& [var, mode, slot] : s.lifts) q.set_lift(var, mode, slot);
    q.complete_lifts();
    q.validate();
  }
  if (s.order) pq.order = *s.order;
  else if (!s.fds.empty()) pq.order = order_via_reduct(q, parse_fds(q, s.fds));
  else if (classify(q).q_hierarchical) pq.order = canonical_free_top_order(q);
  else if (!q.free.empty() && q.free_lift_mode == FreeLiftMode::GroupBy) pq.order = fallback_free_top_order(q);
  else pq.order = fallback_order(q);
  return pq;
}

ViewTree compile_scenario(const Scenario& s, const PreparedQuery& pq) {
  CompileOptions opt;
  opt.shape = s.shape;
  opt.all_updatable = false;
  for (std::size_t i = 0; i < s.relations.size(); ++i)
    if (relation_updatable(s, s.relations[i])) opt.updatable.push_back(static_cast<int>(i));
  return compile(pq.query, infer_dep(pq.order, pq.query), opt);
}

// ---------------------------------------------------------------------------
// Data files

Value Dictionary::encode(const std::string& s) {
  auto [it, fresh] = ids_.emplace(s, static_cast<Value>(names_.size()));
  if (fresh) names_.push_back(s);
  return it->second;
}

const std::string& Dictionary::decode(Value v) const {
  if (v < 0 || v >= static_cast<Value>(names_.size())) throw Error("unknown dictionary id " + std::to_string(v));
  return names_[v];
}

Value parse_value(const std::string& text, ValueKind kind, Dictionary& dict) {
  if (kind == ValueKind::Categorical) return dict.encode(text);
  std::size_t used = 0;
  try {
    if (kind == ValueKind::Int) {
      long long x = std::stoll(text, &used);
      if (used == text.size()) return x;
    } else {
      double x = std::stod(text, &used);
      if (used == text.size()) return encode_real(x);
    }
  } catch (const std::exception&) {
  }
  throw Error(std::string(kind == ValueKind::Int ? "not an integer" : "not a number") + ": '" + text + "'");
}

std::string render_value(Value v, ValueKind kind, const Dictionary& dict) {
  if (kind == ValueKind::Categorical) return dict.decode(v);
  return format_value(v, kind);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw Error("unterminated quote");
  out.push_back(std::move(cur));
  for (auto& f : out) {
    auto b = f.find_first_not_of(" \t"), e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::vector<DataRow> read_relation_csv(const std::string& path, const RelationDecl& decl, const Query& q,
                                       Dictionary& dict) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<DataRow> rows;
  std::string line;
  int lineno = 0;
  std::vector<int> col_of;  // declared column -> file column
  int payload_col = -1, sign_col = -1;
  std::size_t width = 0;
  auto fail = [&](const std::string& msg) { throw Error(path + ":" + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> cells;
    try {
      cells = split_csv_line(line);
    } catch (const Error& e) {
      fail(e.what());
    }
    if (col_of.empty()) {
      width = cells.size();
      std::vector<char> used(cells.size(), 0);
      for (const auto& c : decl.fields.empty() ? decl.columns : decl.fields) {
        auto it = std::find(cells.begin(), cells.end(), c);
        if (it == cells.end()) fail("header lacks declared column '" + c + "'");
        col_of.push_back(static_cast<int>(it - cells.begin()));
        used[col_of.back()] = 1;
      }
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (used[i]) continue;
        if (!decl.payload_column.empty() && cells[i] == decl.payload_column) payload_col = static_cast<int>(i);
        else if (cells[i] == "sign") sign_col = static_cast<int>(i);
        else fail("unexpected column '" + cells[i] + "'");
      }
      if (!decl.payload_column.empty() && payload_col < 0) fail("header lacks payload column '" + decl.payload_column + "'");
      continue;
    }
    if (cells.size() != width) fail("expected " + std::to_string(width) + " fields, got " + std::to_string(cells.size()));
    DataRow row;
    try {
      for (std::size_t c = 0; c < decl.columns.size(); ++c) {
        VarId v = q.var(decl.columns[c]);
        row.key.push_back(parse_value(cells[col_of[c]], q.vars[v].kind, dict));
      }
      if (payload_col >= 0) row.weight = std::stod(cells[payload_col]);
      if (sign_col >= 0) {
        const auto& sg = cells[sign_col];
        if (sg == "-1" || sg == "-") row.weight = -row.weight;
        else if (sg != "1" && sg != "+1" && sg != "+") fail("sign must be +1 or -1, got '" + sg + "'");
      }
    } catch (const Error& e) {
      if (std::string(e.what()).rfind(path, 0) == 0) throw;
      fail(e.what());
    } catch (const std::exception& e) {
      fail(std::string("cannot parse value: ") + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Streams

std::vector<Batch> synthesize_stream(const std::vector<std::vector<DataRow>>& relations, int batch_size,
                                     std::uint64_t seed) {
  if (batch_size < 1) throw Error("batch size must be at least 1");
  std::vector<std::vector<std::size_t>> order(relations.size());
  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < relations.size(); ++r) {
    order[r].resize(relations[r].size());
    for (std::size_t i = 0; i < order[r].size(); ++i) order[r][i] = i;
    if (seed != 0) std::shuffle(order[r].begin(), order[r].end(), rng);
  }
  std::vector<Batch> out;
  Batch cur;
  std::vector<std::size_t> next(relations.size(), 0);
  bool more = true;
  while (more) {
    more = false;
    for (std::size_t r = 0; r < relations.size(); ++r) {
      if (next[r] >= order[r].size()) continue;
      const DataRow& row = relations[r][order[r][next[r]++]];
      more = true;
      StreamEvent e{static_cast<int>(r), row.weight < 0 ? -1 : 1, row.key, std::fabs(row.weight)};
      cur.push_back(std::move(e));
      if (static_cast<int>(cur.size()) == batch_size) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Engines

namespace {

template <class R>
class Engine {
 public:
  virtual ~Engine() = default;
  virtual void load(const std::vector<Relation<R>>& db) = 0;
  virtual void apply(std::vector<UpdateDelta<R>>& batch) = 0;
  virtual Relation<R> result() const = 0;
  /// Walks the result as an enumeration would and returns the tuple count.
  virtual std::uint64_t enumerate() = 0;
  virtual Relation<R> listing() const = 0;
  virtual OpCounters& counters() = 0;
};

template <class R>
class FivmEngine : public Engine<R> {
 public:
  FivmEngine(ViewTree t, const R& ring) : rt_(std::move(t), ring) {}
  void load(const std::vector<Relation<R>>& db) override { rt_.load(db); }
  void apply(std::vector<UpdateDelta<R>>& batch) override { rt_.update_batch(batch); }
  Relation<R> result() const override { return rt_.result(); }
  std::uint64_t enumerate() override {
    return enumerate_result(rt_, [](const Tuple&, const typename R::Payload&) {});
  }
  Relation<R> listing() const override { return materialize_listing(rt_); }
  OpCounters& counters() override { return rt_.counters(); }
  const Runtime<R>& runtime() const { return rt_; }

 private:
  Runtime<R> rt_;
};

template <class R>
std::uint64_t walk(const Relation<R>& r) {
  std::uint64_t n = 0;
  r.for_each([&](const Tuple&, const typename R::Payload&) { ++n; });
  return n;
}

template <class R>
class FirstOrder : public Engine<R> {
 public:
  FirstOrder(const Query& q, const R& ring) : e_(q, ring) {}
  void load(const std::vector<Relation<R>>& db) override { e_.load(db); }
  void apply(std::vector<UpdateDelta<R>>& batch) override {
    for (auto& d : batch) e_.update(d.leaf, d.delta);
  }
  Relation<R> result() const override { return e_.result(); }
  std::uint64_t enumerate() override { return walk(e_.result()); }
  Relation<R> listing() const override { return e_.result(); }
  OpCounters& counters() override { return e_.counters(); }

 private:
  FirstOrderEngine<R> e_;
};

template <class R>
class Reevaluate : public Engine<R> {
 public:
  Reevaluate(const Query& q, const R& ring) : e_(q, ring) {}
  void load(const std::vector<Relation<R>>& db) override { e_.load(db); }
  void apply(std::vector<UpdateDelta<R>>& batch) override {
    for (auto& d : batch) e_.apply(d.leaf, d.delta);
    e_.refresh();
  }
  Relation<R> result() const override { return e_.result(); }
  std::uint64_t enumerate() override { return walk(e_.result()); }
  Relation<R> listing() const override { return e_.result(); }
  OpCounters& counters() override { return e_.counters(); }

 private:
  ReevaluationEngine<R> e_;
};

/// Everything a run needs before streaming starts.
struct Prepared {
  const Scenario* s = nullptr;
  PreparedQuery pq;
  Dictionary dict;
  std::vector<std::vector<DataRow>> rows;  // per relation declaration
  std::vector<int> stream_rels;            // declarations whose data is streamed
  std::vector<std::vector<int>> occurrences;  // per declaration: occurrences fed by its stream
  int batch_size = 1;
  std::uint64_t seed = 0;
  int intvl = 0;
};

Prepared prepare(const Scenario& s, const RunOptions& opt) {
  s.validate();
  Prepared p;
  p.s = &s;
  p.pq = prepare_query(s);
  p.batch_size = opt.batch_size.value_or(s.batch_size);
  p.seed = opt.seed.value_or(s.seed);
  p.intvl = opt.intvl.value_or(s.intvl);
  if (p.batch_size < 1) throw Error("batch size must be at least 1");
  if (p.intvl < 0) throw Error("enumeration interval must be non-negative");
  const Query& q = p.pq.query;
  // self-joins: the first declaration of a name carries the data for all its occurrences
  std::map<std::string, int> first;
  p.occurrences.resize(s.relations.size());
  for (std::size_t i = 0; i < s.relations.size(); ++i) {
    const auto& d = s.relations[i];
    auto [it, fresh] = first.emplace(d.name, static_cast<int>(i));
    p.occurrences[it->second].push_back(static_cast<int>(i));
    if (!fresh && relation_updatable(s, d) != relation_updatable(s, s.relations[it->second]))
      throw Error("occurrences of " + d.name + " disagree on being updatable");
  }
  p.rows.resize(s.relations.size());
  for (std::size_t i = 0; i < s.relations.size(); ++i) {
    if (p.occurrences[i].empty()) continue;
    fs::path f = fs::path(s.base_dir) / s.relations[i].file;
    p.rows[i] = read_relation_csv(f.string(), s.relations[i], q, p.dict);
    if (relation_updatable(s, s.relations[i])) p.stream_rels.push_back(static_cast<int>(i));
  }
  if (s.sorted) {
    // top-down along the variable order: compare keys on variables by depth
    auto order = infer_dep(p.pq.order, q);
    for (int r : p.stream_rels) {
      const auto& cols = s.relations[r].columns;
      std::vector<int> by_depth(cols.size());
      for (std::size_t c = 0; c < cols.size(); ++c) by_depth[c] = static_cast<int>(c);
      std::stable_sort(by_depth.begin(), by_depth.end(), [&](int a, int b) {
        return order.depth[q.var(cols[a])] < order.depth[q.var(cols[b])];
      });
      std::stable_sort(p.rows[r].begin(), p.rows[r].end(), [&](const DataRow& a, const DataRow& b) {
        for (int c : by_depth)
          if (a.key[c] != b.key[c]) return a.key[c] < b.key[c];
        return false;
      });
    }
  }
  if (!s.features.empty()) {
    // applications read the root payload; check the ring fits before streaming
    bool gen = p.pq.cov->generalized;
    if (s.app.kind == "regression" && gen) throw Error("regression needs continuous features only");
    if ((s.app.kind == "mutual_information" || s.app.kind == "chow_liu")) {
      for (auto k : p.pq.cov->slot_kinds)
        if (k != FeatureKind::Categorical) throw Error(s.app.kind + " needs categorical (or discretized) features");
    }
  }
  return p;
}

template <class R>
std::unique_ptr<Engine<R>> make_engine(const std::string& name, const Prepared& p, const R& ring) {
  if (name == "fivm") return std::make_unique<FivmEngine<R>>(compile_scenario(*p.s, p.pq), ring);
  if (name == "first_order") return std::make_unique<FirstOrder<R>>(p.pq.query, ring);
  if (name == "reevaluate") return std::make_unique<Reevaluate<R>>(p.pq.query, ring);
  throw Error("unknown engine '" + name + "' (fivm, first_order, reevaluate)");
}

template <class R>
std::vector<Relation<R>> initial_db(const Prepared& p, const R& ring) {
  const Query& q = p.pq.query;
  std::vector<Relation<R>> db;
  for (const auto& occ : q.relations) db.emplace_back(ring, occ.schema);
  for (std::size_t i = 0; i < p.rows.size(); ++i) {
    if (p.occurrences[i].empty() || relation_updatable(*p.s, p.s->relations[i])) continue;
    for (int o : p.occurrences[i]) db[o] = to_relation(p.rows[i], q.relations[o].schema, ring);
  }
  return db;
}

template <class R>
std::vector<UpdateDelta<R>> batch_deltas(const Prepared& p, const Batch& b, const R& ring) {
  const Query& q = p.pq.query;
  std::map<int, Relation<R>> per;
  for (const auto& e : b) {
    auto it = per.find(e.relation);
    if (it == per.end()) it = per.emplace(e.relation, Relation<R>(ring, q.relations[e.relation].schema)).first;
    auto pay = e.weight == 1 ? ring.one() : ring.from_double(e.weight);
    it->second.add(e.key, e.sign < 0 ? ring.negate(pay) : pay);
  }
  std::vector<UpdateDelta<R>> out;
  for (auto& [r, d] : per) {
    for (int o : p.occurrences[r]) {
      Relation<R> x(ring, q.relations[o].schema);
      for (auto [k, pay] : d) x.add(k, pay);
      out.push_back({o, std::move(x)});
    }
  }
  return out;
}

template <class R>
std::string render_listing(const Relation<R>& rel, const Query& q, const Dictionary& dict) {
  std::vector<std::pair<Tuple, std::vector<std::string>>> rows;
  for (auto [k, pay] : rel) rows.push_back({k, payload_cells(rel.ring(), pay)});
  std::sort(rows.begin(), rows.end());
  std::ostringstream os;
  std::vector<std::string> head;
  for (VarId v : rel.schema()) head.push_back(q.var_name(v));
  for (auto& c : payload_columns(rel.ring())) head.push_back(c);
  for (std::size_t i = 0; i < head.size(); ++i) os << (i ? "," : "") << csv_escape(head[i]);
  os << "\n";
  for (const auto& [k, cells] : rows) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < k.size(); ++i) row.push_back(render_value(k[i], q.vars[rel.schema()[i]].kind, dict));
    row.insert(row.end(), cells.begin(), cells.end());
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_escape(row[i]);
    os << "\n";
  }
  return os.str();
}

/// Post-processing of the root payload; returns a CSV and appends to `note`.
template <class R>
std::string run_app(const Prepared& p, const Relation<R>& result, const R& ring, std::vector<double>& theta,
                    std::string& note, int batch) {
  const auto& app = p.s->app;
  if (app.kind == "none") return {};
  if constexpr (std::is_same_v<R, ContinuousCovarianceRing> || std::is_same_v<R, GeneralCovarianceRing>) {
    const CovarianceQuery& cq = *p.pq.cov;
    const auto* pay = result.find(Tuple{});
    auto cov = pay ? *pay : ring.zero();
    std::ostringstream os;
    if (app.kind == "covariance") {
      if constexpr (std::is_same_v<R, ContinuousCovarianceRing>) write_covariance_csv(os, cov, cq.slot_names);
      else write_covariance_csv(os, cov, cq);
      return os.str();
    }
    if constexpr (std::is_same_v<R, ContinuousCovarianceRing>) {
      if (app.kind == "regression") {
        if (!(cov.c > 0)) return {};
        RegressionConfig cfg;
        cfg.label = cq.slot_of(app.label);
        if (app.features.empty()) {
          for (int i = 0; i < cq.degree(); ++i)
            if (i != cfg.label) cfg.features.push_back(i);
        } else {
          for (const auto& f : app.features) cfg.features.push_back(cq.slot_of(f));
        }
        cfg.threshold = app.threshold;
        cfg.max_iterations = app.max_iterations;
        cfg.step = app.step > 0 ? app.step : safe_step_size(cov, cfg);
        cfg.warm_start = app.warm_start && !theta.empty();
        auto r = train_linear_regression(cov, cfg, cfg.warm_start ? &theta : nullptr);
        if (r.diverged) throw Error("regression diverged: " + r.diagnostics);
        theta = r.theta;
        note += "batch " + std::to_string(batch) + ": " + std::to_string(r.iterations) + " iterations\n";
        write_theta_csv(os, r, cfg, cq.slot_names);
        return os.str();
      }
    } else {
      if (!pay) return {};
      auto mi = mutual_information_matrix(cov, cq.slot_vars);
      if (app.kind == "mutual_information") {
        write_mi_csv(os, mi, cq.slot_names);
      } else {
        write_chow_liu_csv(os, chow_liu_tree(mi), cq.slot_names);
      }
      return os.str();
    }
  }
  throw Error("application " + app.kind + " does not fit ring " + p.pq.query.ring.describe());
}

double tolerance_of(const RingSpec& r) {
  if (r.kind == RingKind::Integer || (r.kind == RingKind::Relational && r.base == BaseKind::Integer)) return 0.0;
  return std::max(r.zero_tolerance, 1e-9);
}

template <class R>
RunReport run_with(const Prepared& p, const std::string& engine, const R& ring) {
  using clock = std::chrono::steady_clock;
  const Scenario& s = *p.s;
  RunReport rep;
  rep.scenario = s.name;
  rep.engine = engine;
  auto eng = make_engine(engine, p, ring);
  std::vector<std::vector<DataRow>> streamed;
  for (int r : p.stream_rels) streamed.push_back(p.rows[r]);
  auto batches = synthesize_stream(streamed, p.batch_size, p.seed);
  for (auto& b : batches)
    for (auto& e : b) e.relation = p.stream_rels[e.relation];
  spdlog::debug("{} / {}: {} batches", s.name, engine, batches.size());

  auto start = clock::now();
  eng->load(initial_db(p, ring));
  std::uint64_t tuples = 0;
  std::vector<double> theta;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    auto deltas = batch_deltas(p, batches[i], ring);
    eng->counters().reset();
    auto t0 = clock::now();
    eng->apply(deltas);
    OpCounters c = eng->counters();
    std::uint64_t enumerated = 0;
    int b = static_cast<int>(i) + 1;
    if (p.intvl > 0 && b % p.intvl == 0) enumerated = eng->enumerate();
    auto t1 = clock::now();
    tuples += batches[i].size();
    rep.rows.push_back({s.name, engine, b, tuples, c.reads, c.writes, c.probes,
                        static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()),
                        enumerated});
    if (s.app.kind != "none") rep.app_csv = run_app(p, eng->result(), ring, theta, rep.app_note, b);
    if (s.timeout_s > 0 && std::chrono::duration<double>(clock::now() - start).count() > s.timeout_s) {
      rep.timed_out = i + 1 < batches.size();
      if (rep.timed_out) {
        spdlog::warn("{} / {}: timeout after {} batches", s.name, engine, b);
        break;
      }
    }
  }
  if (batches.empty() && s.app.kind != "none") rep.app_csv = run_app(p, eng->result(), ring, theta, rep.app_note, 0);
  rep.result_csv = render_listing(eng->result(), p.pq.query, p.dict);
  return rep;
}

template <class R>
VerifyReport verify_with(const Prepared& p, const R& ring) {
  VerifyReport out;
  std::vector<std::unique_ptr<Engine<R>>> engines;
  for (const auto& e : kEngines) engines.push_back(make_engine(e, p, ring));
  std::vector<std::vector<DataRow>> streamed;
  for (int r : p.stream_rels) streamed.push_back(p.rows[r]);
  auto batches = synthesize_stream(streamed, p.batch_size, p.seed);
  auto db = initial_db(p, ring);
  for (auto& e : engines) e->load(db);
  double tol = tolerance_of(p.pq.query.ring);
  auto compare = [&](int b) {
    auto ref = engines[0]->result();
    for (std::size_t e = 1; e < engines.size(); ++e) {
      std::string why;
      if (!same_content(ref, engines[e]->result(), tol, &why)) {
        out.ok = false;
        out.message = p.s->name + ": " + kEngines[0] + " and " + kEngines[e] + " differ after batch " +
                      std::to_string(b) + ": " + why;
        return false;
      }
    }
    if (p.intvl > 0 && b > 0 && b % p.intvl == 0) {
      auto listing = engines[0]->listing();
      std::string why;
      if (!same_content(listing, engines[2]->listing(), tol, &why)) {
        out.ok = false;
        out.message = p.s->name + ": enumerated listing differs after batch " + std::to_string(b) + ": " + why;
        return false;
      }
    }
    return true;
  };
  if (!compare(0)) return out;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (auto& e : batches[i]) e.relation = p.stream_rels[e.relation];
    auto deltas = batch_deltas(p, batches[i], ring);
    for (auto& e : engines) {
      auto copy = deltas;
      e->apply(copy);
    }
    out.batches = static_cast<int>(i) + 1;
    if (!compare(out.batches)) return out;
  }
  out.message = p.s->name + ": " + std::to_string(out.batches) + " batches, engines agree";
  return out;
}

}  // namespace

RunReport run_scenario(const Scenario& s, const std::string& engine, const RunOptions& opt) {
  if (std::find(kEngines.begin(), kEngines.end(), engine) == kEngines.end())
    throw Error("unknown engine '" + engine + "' (fivm, first_order, reevaluate)");
  Prepared p = prepare(s, opt);
  return with_ring(p.pq.query.ring, [&](const auto& ring) { return run_with(p, engine, ring); });
}

VerifyReport verify_scenario(const Scenario& s, const RunOptions& opt) {
  Prepared p = prepare(s, opt);
  return with_ring(p.pq.query.ring, [&](const auto& ring) { return verify_with(p, ring); });
}

std::string enumerate_scenario(const Scenario& s) {
  Prepared p = prepare(s, {});
  return with_ring(p.pq.query.ring, [&](const auto& ring) {
    using R = std::decay_t<decltype(ring)>;
    const Query& q = p.pq.query;
    std::vector<Relation<R>> db;
    for (const auto& occ : q.relations) db.emplace_back(ring, occ.schema);
    for (std::size_t i = 0; i < p.rows.size(); ++i)
      for (int o : p.occurrences[i]) db[o] = to_relation(p.rows[i], q.relations[o].schema, ring);
    Runtime<R> rt(compile_scenario(s, p.pq), ring);
    rt.load(db);
    return render_listing(materialize_listing(rt), q, p.dict);
  });
}

// ---------------------------------------------------------------------------
// Metrics

void write_metrics(std::ostream& os, const std::vector<RunReport>& reports) {
  os << kMetricsHeader << "\n";
  for (const auto& r : reports)
    for (const auto& m : r.rows)
      os << csv_escape(m.scenario) << ',' << csv_escape(m.engine) << ',' << m.batch << ',' << m.tuples << ','
         << m.reads << ',' << m.writes << ',' << m.probes << ',' << m.elapsed_ns << ',' << m.enumerated << '\n';
}

void write_metrics_file(const std::string& path, const std::vector<RunReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write metrics to " + path);
  write_metrics(out, reports);
  if (!out) throw Error("error while writing " + path);
}

std::vector<RunReport> run_parallel(const std::vector<std::pair<const Scenario*, std::string>>& jobs,
                                    const RunOptions& opt, int threads) {
  std::vector<RunReport> out(jobs.size());
  std::vector<std::exception_ptr> errs(jobs.size());
  std::atomic<std::size_t> next{0};
  int n = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  n = std::min<int>(n, static_cast<int>(jobs.size()));
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        out[i] = run_scenario(*jobs[i].first, jobs[i].second, opt);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace fivm
