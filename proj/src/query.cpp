#include "fivm/query.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <set>

namespace fivm {

// ---------------------------------------------------------------------------
// Query

Query Query::make(const std::vector<std::pair<std::string, std::vector<std::string>>>& rels,
                  const std::vector<std::string>& free_vars, RingSpec ring) {
  Query q;
  q.ring = ring;
  for (const auto& [name, vs] : rels) q.add_relation(name, vs);
  q.set_free(free_vars);
  q.complete_lifts();
  return q;
}

VarId Query::add_var(const std::string& name, ValueKind kind) {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<VarId>(i);
  vars.push_back({name, kind});
  return static_cast<VarId>(vars.size() - 1);
}

int Query::add_relation(const std::string& name, const std::vector<std::string>& var_names) {
  RelationOccurrence r{name, {}};
  for (const auto& v : var_names) r.schema.push_back(add_var(v));
  if (make_varset(r.schema).size() != r.schema.size()) throw Error("relation " + name + " repeats a variable");
  if (r.schema.empty()) throw Error("relation " + name + " has an empty schema");
  relations.push_back(std::move(r));
  return static_cast<int>(relations.size() - 1);
}

VarId Query::var(const std::string& name) const {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<VarId>(i);
  throw Error("unknown variable " + name);
}

bool Query::has_var(const std::string& name) const {
  return std::any_of(vars.begin(), vars.end(), [&](const VarInfo& v) { return v.name == name; });
}

VarSet Query::all_vars() const {
  VarSet s(vars.size());
  std::iota(s.begin(), s.end(), 0);
  return s;
}

VarSet Query::bound_vars() const { return vs_minus(all_vars(), free); }

std::vector<int> Query::rels_of(VarId v) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < relations.size(); ++i)
    if (std::find(relations[i].schema.begin(), relations[i].schema.end(), v) != relations[i].schema.end())
      out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Query::occurrences_of(const std::string& relation_name) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < relations.size(); ++i)
    if (relations[i].name == relation_name) out.push_back(static_cast<int>(i));
  return out;
}

void Query::set_free(const std::vector<std::string>& names) {
  VarSet s;
  for (const auto& n : names) s.push_back(var(n));
  free = make_varset(s);
  for (VarId v : free) {
    auto it = lifts.find(v);
    if (it != lifts.end() && free_lift_mode == FreeLiftMode::GroupBy) lifts.erase(it);
  }
}

void Query::set_lift(const std::string& var_name, LiftMode mode, int slot) {
  VarId v = var(var_name);
  lifts[v] = LiftingFunction{v, mode, slot, vars[v].kind};
}

VarSet Query::lifted_vars() const {
  return free_lift_mode == FreeLiftMode::RelationalPayload ? all_vars() : bound_vars();
}

void Query::complete_lifts() {
  for (VarId v : lifted_vars()) {
    if (lifts.count(v)) continue;
    LiftMode m = LiftMode::ToOne;
    if (free_lift_mode == FreeLiftMode::RelationalPayload) {
      m = is_free(v) ? LiftMode::RelationalSingleton : LiftMode::RelationalUnit;
    }
    lifts[v] = LiftingFunction{v, m, 0, vars[v].kind};
  }
  for (auto& [v, f] : lifts) f.kind = vars[v].kind;
}

const LiftingFunction& Query::lift_of(VarId v) const {
  auto it = lifts.find(v);
  if (it == lifts.end()) throw Error("no lifting function for variable " + var_name(v));
  return it->second;
}

void Query::validate() const {
  ring.validate();
  if (relations.empty()) throw Error("query has no relations");
  for (VarId v = 0; v < static_cast<VarId>(vars.size()); ++v)
    if (rels_of(v).empty()) throw Error("variable " + var_name(v) + " occurs in no relation");
  for (VarId v : free)
    if (v < 0 || v >= static_cast<VarId>(vars.size())) throw Error("free variable out of range");
  VarSet need = lifted_vars();
  for (VarId v : need)
    if (!lifts.count(v)) throw Error("missing lifting function for " + var_name(v));
  for (const auto& [v, f] : lifts) {
    if (!vs_contains(need, v)) throw Error("lifting function given for free variable " + var_name(v));
    if (f.target != v) throw Error("lifting function for " + var_name(v) + " targets another variable");
    if (ring.kind == RingKind::Covariance &&
        (f.mode == LiftMode::CovarianceContinuous || f.mode == LiftMode::CovarianceCategorical) &&
        (f.slot < 0 || f.slot >= ring.degree))
      throw Error("covariance slot of " + var_name(v) + " outside the ring degree");
  }
}

std::string Query::names(const VarSet& s) const {
  std::string r;
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + var_name(s[i]);
  return r;
}

std::string Query::describe() const {
  std::string r = "Q(" + names(free) + ") =";
  for (std::size_t i = 0; i < relations.size(); ++i) {
    r += (i ? " * " : " ") + relations[i].name + "(";
    for (std::size_t j = 0; j < relations[i].schema.size(); ++j)
      r += (j ? "," : "") + var_name(relations[i].schema[j]);
    r += ")";
  }
  return r + "  over " + ring.describe();
}

// ---------------------------------------------------------------------------
// GYO

std::vector<Hyperedge> gyo_reduce(std::vector<Hyperedge> edges) {
  bool changed = true;
  while (changed) {
    changed = false;
    // rule 1: a variable in exactly one edge
    std::map<VarId, int> occ;
    for (const auto& e : edges)
      for (VarId v : e.vars) occ[v]++;
    for (auto& e : edges) {
      VarSet keep;
      for (VarId v : e.vars)
        if (occ[v] > 1) keep.push_back(v);
      if (keep.size() != e.vars.size()) {
        e.vars = keep;
        changed = true;
      }
    }
    // empty edges vanish
    auto before = edges.size();
    edges.erase(std::remove_if(edges.begin(), edges.end(), [](const Hyperedge& e) { return e.vars.empty(); }),
                edges.end());
    if (edges.size() != before) changed = true;
    // rule 2: an edge contained in another one
    for (std::size_t i = 0; i < edges.size() && !changed; ++i) {
      for (std::size_t j = 0; j < edges.size(); ++j) {
        if (i == j || !vs_subset(edges[i].vars, edges[j].vars)) continue;
        if (edges[i].vars == edges[j].vars) {
          // among equal edges drop indicators first, then the later one
          bool drop_i = (edges[i].indicator && !edges[j].indicator) ||
                        (edges[i].indicator == edges[j].indicator && i > j);
          if (!drop_i) continue;
        }
        edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  return edges;
}

bool is_acyclic(const std::vector<VarSet>& edges) {
  std::vector<Hyperedge> h;
  for (const auto& e : edges) h.push_back({make_varset(e), false, -1});
  return gyo_reduce(std::move(h)).empty();
}

std::string QueryClass::describe() const {
  std::vector<std::string> f;
  f.push_back(acyclic ? "acyclic" : "cyclic");
  if (free_connex) f.push_back("free-connex");
  if (hierarchical) f.push_back("hierarchical");
  if (q_hierarchical) f.push_back("q-hierarchical");
  return fmt::format("{}", fmt::join(f, ", "));
}

QueryClass classify(const Query& q) {
  QueryClass c;
  std::vector<VarSet> edges;
  for (const auto& r : q.relations) edges.push_back(make_varset(r.schema));
  c.acyclic = is_acyclic(edges);
  if (c.acyclic) {
    auto with_free = edges;
    with_free.push_back(q.free);
    c.free_connex = is_acyclic(with_free);
  }
  std::vector<std::vector<int>> rels(q.num_vars());
  for (VarId v = 0; v < static_cast<VarId>(q.num_vars()); ++v) rels[v] = q.rels_of(v);
  auto subset = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
  };
  c.hierarchical = true;
  bool q_ok = true;
  for (VarId x = 0; x < static_cast<VarId>(q.num_vars()); ++x) {
    for (VarId y = 0; y < static_cast<VarId>(q.num_vars()); ++y) {
      if (x == y) continue;
      std::vector<int> common;
      std::set_intersection(rels[x].begin(), rels[x].end(), rels[y].begin(), rels[y].end(),
                            std::back_inserter(common));
      if (!subset(rels[x], rels[y]) && !subset(rels[y], rels[x]) && !common.empty()) c.hierarchical = false;
      bool strict_super = subset(rels[y], rels[x]) && rels[x] != rels[y];
      if (strict_super && q.is_free(y) && !q.is_free(x)) q_ok = false;
    }
  }
  c.q_hierarchical = c.hierarchical && q_ok;
  return c;
}

// ---------------------------------------------------------------------------
// Variable orders

namespace {

void forest_str(const ForestNode& n, std::string& out) {
  out += n.var;
  if (n.children.empty()) return;
  out += "(";
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    if (i) out += ", ";
    forest_str(n.children[i], out);
  }
  out += ")";
}

}  // namespace

std::string forest_to_string(const Forest& f) {
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (i) out += "; ";
    forest_str(f[i], out);
  }
  return out;
}

VarSet VariableOrder::ancestors(VarId x) const {
  VarSet r;
  for (VarId p = parent.at(x); p >= 0; p = parent[p]) r.push_back(p);
  return make_varset(r);
}

VarSet VariableOrder::subtree_vars(VarId x) const {
  VarSet r{x};
  for (VarId c : children.at(x)) r = vs_union(r, subtree_vars(c));
  return r;
}

std::vector<int> VariableOrder::subtree_leaves(VarId x) const {
  std::vector<int> r;
  for (VarId v : subtree_vars(x)) r.insert(r.end(), leaves_at[v].begin(), leaves_at[v].end());
  std::sort(r.begin(), r.end());
  return r;
}

bool VariableOrder::is_free_top(const VarSet& free) const {
  for (VarId x : free)
    for (VarId a : ancestors(x))
      if (!vs_contains(free, a)) return false;
  return true;
}

std::vector<VarId> VariableOrder::covering_violations(const Query& q) const {
  std::vector<VarId> bad;
  for (VarId x = 0; x < static_cast<VarId>(parent.size()); ++x) {
    VarSet need = vs_union({x}, dep[x]);
    bool ok = std::any_of(q.relations.begin(), q.relations.end(),
                          [&](const RelationOccurrence& r) { return vs_subset(need, make_varset(r.schema)); });
    if (!ok) bad.push_back(x);
  }
  return bad;
}

Forest VariableOrder::to_forest(const Query& q) const {
  std::function<ForestNode(VarId)> build = [&](VarId x) {
    ForestNode n{q.var_name(x), {}};
    for (VarId c : children[x]) n.children.push_back(build(c));
    return n;
  };
  Forest f;
  for (VarId r : roots) f.push_back(build(r));
  return f;
}

VariableOrder infer_dep(const Forest& forest, const Query& q) {
  const std::size_t n = q.num_vars();
  VariableOrder o;
  o.parent.assign(n, -1);
  o.children.assign(n, {});
  o.depth.assign(n, 0);
  o.leaves_at.assign(n, {});
  std::vector<bool> seen(n, false);
  std::function<void(const ForestNode&, VarId, int)> visit = [&](const ForestNode& node, VarId par, int d) {
    VarId x = q.var(node.var);
    if (seen[x]) throw Error("variable " + node.var + " appears twice in the variable order");
    seen[x] = true;
    o.parent[x] = par;
    o.depth[x] = d;
    if (par >= 0) o.children[par].push_back(x);
    else o.roots.push_back(x);
    for (const auto& c : node.children) visit(c, x, d + 1);
  };
  for (const auto& root : forest) visit(root, -1, 0);
  for (std::size_t v = 0; v < n; ++v)
    if (!seen[v]) throw Error("variable order misses variable " + q.var_name(static_cast<VarId>(v)));

  std::vector<VarSet> anc(n);
  for (VarId x = 0; x < static_cast<VarId>(n); ++x) anc[x] = o.ancestors(x);

  o.leaf_var.assign(q.relations.size(), -1);
  for (std::size_t i = 0; i < q.relations.size(); ++i) {
    const auto& sch = q.relations[i].schema;
    VarId low = sch[0];
    for (VarId v : sch)
      if (o.depth[v] > o.depth[low]) low = v;
    for (VarId v : sch)
      if (v != low && !vs_contains(anc[low], v))
        throw Error("variables of relation " + q.relations[i].name + " do not lie on one root-to-leaf path");
    o.leaf_var[i] = low;
    o.leaves_at[low].push_back(static_cast<int>(i));
  }

  o.dep.assign(n, {});
  for (VarId x = 0; x < static_cast<VarId>(n); ++x) {
    VarSet sub = o.subtree_vars(x);
    VarSet d;
    for (const auto& r : q.relations) {
      VarSet s = make_varset(r.schema);
      if (vs_intersect(s, sub).empty()) continue;
      d = vs_union(d, vs_intersect(s, anc[x]));
    }
    o.dep[x] = d;
  }
  return o;
}

Forest order_from_sequence(const Query& q, const std::vector<VarId>& sequence) {
  const std::size_t n = q.num_vars();
  if (make_varset(sequence) != q.all_vars() || sequence.size() != n)
    throw Error("elimination sequence must list every variable once");
  std::vector<int> pos(n);
  for (std::size_t i = 0; i < sequence.size(); ++i) pos[sequence[i]] = static_cast<int>(i);
  std::vector<VarSet> edges;
  for (const auto& r : q.relations) edges.push_back(make_varset(r.schema));
  std::vector<VarId> parent(n, -1);
  for (auto it = sequence.rbegin(); it != sequence.rend(); ++it) {
    VarId x = *it;
    VarSet nb;
    std::vector<VarSet> rest;
    for (auto& e : edges) {
      if (vs_contains(e, x)) nb = vs_union(nb, e);
      else rest.push_back(e);
    }
    nb = vs_minus(nb, {x});
    VarId p = -1;
    for (VarId y : nb)
      if (p < 0 || pos[y] > pos[p]) p = y;
    parent[x] = p;
    if (!nb.empty()) rest.push_back(nb);
    edges = std::move(rest);
  }
  std::vector<std::vector<VarId>> kids(n);
  std::vector<VarId> roots;
  for (VarId x : sequence) {
    if (parent[x] < 0) roots.push_back(x);
    else kids[parent[x]].push_back(x);
  }
  std::function<ForestNode(VarId)> build = [&](VarId x) {
    ForestNode node{q.var_name(x), {}};
    for (VarId c : kids[x]) node.children.push_back(build(c));
    return node;
  };
  Forest f;
  for (VarId r : roots) f.push_back(build(r));
  return f;
}

namespace {

std::vector<VarId> by_rels_then_name(const Query& q, VarSet vs) {
  std::vector<VarId> seq(vs.begin(), vs.end());
  std::sort(seq.begin(), seq.end(), [&](VarId a, VarId b) {
    auto ra = q.rels_of(a).size(), rb = q.rels_of(b).size();
    if (ra != rb) return ra > rb;
    return q.var_name(a) < q.var_name(b);
  });
  return seq;
}

}  // namespace

Forest fallback_order(const Query& q) { return order_from_sequence(q, by_rels_then_name(q, q.all_vars())); }

Forest fallback_free_top_order(const Query& q) {
  auto seq = by_rels_then_name(q, q.free);
  auto rest = by_rels_then_name(q, q.bound_vars());
  seq.insert(seq.end(), rest.begin(), rest.end());
  return order_from_sequence(q, seq);
}

Forest canonical_free_top_order(const Query& q) {
  if (!classify(q).q_hierarchical) throw Error("canonical free-top order needs a q-hierarchical query");
  // A relation's variables sorted by (more relations first, free first, name)
  // form its root-to-leaf path; paths sharing a prefix are merged.
  auto key_less = [&](VarId a, VarId b) {
    auto ra = q.rels_of(a).size(), rb = q.rels_of(b).size();
    if (ra != rb) return ra > rb;
    if (q.is_free(a) != q.is_free(b)) return q.is_free(a);
    return q.var_name(a) < q.var_name(b);
  };
  Forest f;
  for (const auto& r : q.relations) {
    std::vector<VarId> path = r.schema;
    std::sort(path.begin(), path.end(), key_less);
    Forest* level = &f;
    for (VarId v : path) {
      const std::string& name = q.var_name(v);
      auto it = std::find_if(level->begin(), level->end(), [&](const ForestNode& n) { return n.var == name; });
      if (it == level->end()) {
        level->push_back({name, {}});
        it = level->end() - 1;
      }
      level = &it->children;
    }
  }
  std::function<void(Forest&)> sort_rec = [&](Forest& lv) {
    std::sort(lv.begin(), lv.end(), [](const ForestNode& a, const ForestNode& b) { return a.var < b.var; });
    for (auto& n : lv) sort_rec(n.children);
  };
  sort_rec(f);
  return f;
}

// ---------------------------------------------------------------------------
// Functional dependencies

FDSet parse_fds(const Query& q,
                const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& fds) {
  FDSet out;
  for (const auto& [l, r] : fds) {
    FunctionalDependency fd;
    for (const auto& n : l) fd.lhs.push_back(q.var(n));
    for (const auto& n : r) fd.rhs.push_back(q.var(n));
    fd.lhs = make_varset(fd.lhs);
    fd.rhs = make_varset(fd.rhs);
    out.push_back(fd);
  }
  return out;
}

VarSet fd_closure(const VarSet& s, const FDSet& fds) {
  VarSet c = make_varset(s);
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& fd : fds) {
      if (vs_subset(fd.lhs, c) && !vs_subset(fd.rhs, c)) {
        c = vs_union(c, fd.rhs);
        grew = true;
      }
    }
  }
  return c;
}

Query sigma_reduct(const Query& q, const FDSet& fds) {
  Query r = q;
  for (auto& rel : r.relations) {
    VarSet ext = vs_minus(fd_closure(make_varset(rel.schema), fds), make_varset(rel.schema));
    rel.schema.insert(rel.schema.end(), ext.begin(), ext.end());
  }
  r.free = fd_closure(q.free, fds);
  // lifts follow the free set; keep the originals for variables that stay bound
  for (VarId v : r.free)
    if (r.free_lift_mode == FreeLiftMode::GroupBy) r.lifts.erase(v);
  return r;
}

Forest order_via_reduct(const Query& q, const FDSet& fds) {
  Query red = sigma_reduct(q, fds);
  QueryClass c = classify(red);
  if (c.q_hierarchical) return canonical_free_top_order(red);
  return fallback_free_top_order(red);
}

}  // namespace fivm
