#include "fivm/viewtree.hpp"

#include <functional>
#include <map>

#include <fmt/format.h>

namespace fivm {

std::string to_string(ViewKind k) {
  switch (k) {
    case ViewKind::Leaf: return "leaf";
    case ViewKind::JoinOnly: return "join";
    case ViewKind::MarginalizeJoin: return "marginalize";
    case ViewKind::Indicator: return "indicator";
  }
  return "?";
}

std::string to_string(IndexRole r) {
  switch (r) {
    case IndexRole::Primary: return "primary";
    case IndexRole::Secondary: return "secondary";
    case IndexRole::Update: return "update";
    case IndexRole::Enumeration: return "enumeration";
  }
  return "?";
}

bool ViewNode::has_index(const VarSet& v) const {
  return std::any_of(indices.begin(), indices.end(), [&](const IndexReq& r) { return r.vars == v; });
}

// ---------------------------------------------------------------------------
// ViewTree helpers

std::vector<int> ViewTree::path_to_root(int id) const {
  std::vector<int> p;
  for (int n = nodes.at(id).parent; n >= 0; n = nodes[n].parent) p.push_back(n);
  return p;
}

std::vector<int> ViewTree::preorder() const {
  std::vector<int> out;
  std::function<void(int)> go = [&](int n) {
    out.push_back(n);
    for (int c : nodes[n].children) go(c);
  };
  if (root >= 0) go(root);
  return out;
}

std::vector<int> ViewTree::indicator_nodes() const {
  std::vector<int> out;
  for (int n : preorder())
    if (nodes[n].kind == ViewKind::Indicator) out.push_back(n);
  return out;
}

std::vector<int> ViewTree::view_nodes() const {
  std::vector<int> out;
  for (int n : preorder())
    if (nodes[n].is_view()) out.push_back(n);
  return out;
}

bool ViewTree::is_updatable(int occurrence) const {
  return std::binary_search(updatable.begin(), updatable.end(), occurrence);
}

bool ViewTree::subtree_updatable(int id) const {
  const ViewNode& n = nodes.at(id);
  for (int r : n.rels)
    if (is_updatable(r)) return true;
  for (int r : n.indicator_sources)
    if (is_updatable(r)) return true;
  return false;
}

int ViewTree::find_view(const std::string& name) const {
  for (const auto& n : nodes)
    if (n.name == name) return n.id;
  return -1;
}

std::string ViewTree::dump() const {
  std::string out;
  std::function<void(int, int)> go = [&](int id, int depth) {
    const ViewNode& n = nodes[id];
    std::string line(static_cast<std::size_t>(depth) * 2, ' ');
    line += n.name + "[" + query.names(n.keys) + "]";
    auto child_ref = [&](int c) { return nodes[c].name + "[" + query.names(nodes[c].keys) + "]"; };
    switch (n.kind) {
      case ViewKind::Leaf: line += "  (relation"; break;
      case ViewKind::Indicator:
        line += " := EXISTS " + query.relations[n.leaf].name + "  (indicator";
        break;
      default: {
        line += " := ";
        if (!n.marg.empty()) {
          VarSet m;
          for (const auto& f : n.marg) m.push_back(f.target);
          line += "SUM[" + query.names(make_varset(m)) + "] ";
        }
        for (std::size_t i = 0; i < n.children.size(); ++i) line += (i ? " * " : "") + child_ref(n.children[i]);
        line += "  (" + std::string(n.materialized ? "materialized" : "transient");
      }
    }
    if (n.kind == ViewKind::Leaf && is_updatable(n.leaf)) line += ", updatable";
    if (n.pinned) line += ", pinned";
    std::vector<std::string> ix;
    for (const auto& r : n.indices)
      if (r.role != IndexRole::Primary) ix.push_back("{" + query.names(r.vars) + "}");
    for (const auto& [g, i] : n.distinct_indices) ix.push_back("{" + query.names(g) + "}->{" + query.names(i) + "}");
    if (!ix.empty()) {
      line += ", indices";
      for (auto& s : ix) line += " " + s;
    }
    out += line + ")\n";
    for (int c : n.children) go(c, depth + 1);
  };
  if (root >= 0) go(root, 0);
  return out;
}

void ViewTree::check() const {
  if (root < 0) throw Error("view tree without root");
  std::vector<int> seen_leaf(query.relations.size(), 0);
  std::vector<char> seen(nodes.size(), 0);
  for (int id : preorder()) {
    const ViewNode& n = nodes[id];
    if (seen[id]++) throw Error("view tree node reached twice");
    if (n.id != id) throw Error("view tree node id mismatch");
    for (int c : n.children)
      if (nodes[c].parent != id) throw Error("broken parent link below " + n.name);
    if (make_varset(n.schema) != n.keys) throw Error("schema and keys differ at " + n.name);
    switch (n.kind) {
      case ViewKind::Leaf:
        if (!n.children.empty()) throw Error("leaf with children");
        seen_leaf.at(n.leaf)++;
        if (n.keys != make_varset(query.relations[n.leaf].schema)) throw Error("leaf keys differ from its schema");
        break;
      case ViewKind::Indicator:
        if (!n.children.empty()) throw Error("indicator with children");
        if (!vs_subset(n.keys, make_varset(query.relations[n.leaf].schema))) throw Error("indicator keys outside source");
        break;
      default: {
        if (n.children.empty()) throw Error("view without children: " + n.name);
        VarSet below;
        for (int c : n.children) below = vs_union(below, nodes[c].keys);
        VarSet m;
        for (const auto& f : n.marg) m.push_back(f.target);
        m = make_varset(m);
        if (m.size() != n.marg.size()) throw Error("variable summed twice at " + n.name);
        if (!vs_subset(n.keys, below)) throw Error("view keys not provided by children at " + n.name);
        if (vs_minus(below, n.keys) != m) throw Error("summed variables do not match keys at " + n.name);
        if ((n.kind == ViewKind::JoinOnly) != m.empty()) throw Error("view kind does not match its definition");
      }
    }
  }
  for (std::size_t i = 0; i < seen_leaf.size(); ++i)
    if (seen_leaf[i] != 1) throw Error("relation occurrence " + std::to_string(i) + " must appear exactly once");
  for (const auto& n : nodes)
    if (!seen[n.id]) throw Error("unreachable node " + n.name);
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::string rel_names(const Query& q, const std::vector<int>& rels) {
  std::string s;
  for (int r : rels) s += q.relations[r].name;
  return s;
}

std::string occurrence_name(const Query& q, int occ) {
  const std::string& name = q.relations[occ].name;
  auto occs = q.occurrences_of(name);
  if (occs.size() <= 1) return name;
  auto pos = std::find(occs.begin(), occs.end(), occ) - occs.begin();
  return pos == 0 ? name : name + "#" + std::to_string(pos + 1);
}

/// Parent links, rels, indicator sources and leaf lookup from the child lists.
void refresh(ViewTree& t) {
  for (auto& n : t.nodes) n.parent = -1;
  t.leaf_node.assign(t.query.relations.size(), -1);
  std::function<void(int)> go = [&](int id) {
    ViewNode& n = t.nodes[id];
    n.rels.clear();
    n.indicator_sources.clear();
    if (n.kind == ViewKind::Leaf) {
      n.rels = {n.leaf};
      t.leaf_node[n.leaf] = id;
    }
    if (n.kind == ViewKind::Indicator) n.indicator_sources = {n.leaf};
    for (int c : n.children) {
      t.nodes[c].parent = id;
      go(c);
      const ViewNode& cn = t.nodes[c];
      n.rels.insert(n.rels.end(), cn.rels.begin(), cn.rels.end());
      n.indicator_sources.insert(n.indicator_sources.end(), cn.indicator_sources.begin(), cn.indicator_sources.end());
    }
    std::sort(n.rels.begin(), n.rels.end());
    std::sort(n.indicator_sources.begin(), n.indicator_sources.end());
    n.indicator_sources.erase(std::unique(n.indicator_sources.begin(), n.indicator_sources.end()),
                              n.indicator_sources.end());
  };
  if (t.root >= 0) go(t.root);
}

class Builder {
 public:
  Builder(ViewTree& t) : t_(t), q_(t.query), o_(t.order) {}

  int add(ViewNode n) {
    n.id = static_cast<int>(t_.nodes.size());
    if (n.schema.empty()) n.schema = n.keys;
    t_.nodes.push_back(std::move(n));
    return t_.nodes.back().id;
  }

  int leaf(int occ) {
    ViewNode n;
    n.kind = ViewKind::Leaf;
    n.leaf = occ;
    n.schema = q_.relations[occ].schema;
    n.keys = make_varset(n.schema);
    n.name = occurrence_name(q_, occ);
    return add(std::move(n));
  }

  std::vector<int> children_of(VarId x, const std::function<int(VarId)>& sub) {
    std::vector<int> kids;
    for (VarId c : o_.children[x]) kids.push_back(sub(c));
    for (int occ : o_.leaves_at[x]) kids.push_back(leaf(occ));
    return kids;
  }

  /// Views for the subtree at x; variables in `kept` stay in the keys.
  int plain(VarId x, const VarSet& kept) {
    ViewNode n;
    n.at_var = x;
    n.children = children_of(x, [&](VarId c) { return plain(c, kept); });
    n.keys = vs_union(o_.dep[x], vs_intersect(kept, o_.subtree_vars(x)));
    if (vs_contains(kept, x)) {
      n.kind = ViewKind::JoinOnly;
    } else {
      n.kind = ViewKind::MarginalizeJoin;
      n.marg = {q_.lift_of(x)};
    }
    return add(std::move(n));
  }

  int free_connex(VarId x, bool has_sibling) {
    if (!q_.is_free(x)) return plain(x, q_.free);
    std::size_t k = o_.children[x].size() + o_.leaves_at[x].size();
    std::vector<int> kids = children_of(x, [&](VarId c) { return free_connex(c, k >= 2); });
    int top;
    if (k >= 2) {
      ViewNode h;
      h.kind = ViewKind::JoinOnly;
      h.at_var = x;
      h.keys = vs_union({x}, o_.dep[x]);
      h.children = kids;
      top = add(std::move(h));
    } else {
      top = kids.at(0);
    }
    t_.enum_view[x] = top;
    if (!has_sibling) return top;
    ViewNode v;
    v.kind = ViewKind::MarginalizeJoin;
    v.at_var = x;
    v.keys = o_.dep[x];
    v.children = {top};
    for (VarId y : vs_minus(t_.nodes[top].keys, v.keys))
      v.marg.push_back(LiftingFunction{y, LiftMode::ToOne, 0, q_.vars[y].kind});
    return add(std::move(v));
  }

  void finish_roots(const std::vector<int>& tops) {
    if (tops.size() == 1) {
      t_.root = tops[0];
    } else {
      ViewNode r;
      r.kind = ViewKind::JoinOnly;
      r.children = tops;
      for (int c : tops) r.keys = vs_union(r.keys, t_.nodes[c].keys);
      t_.root = add(std::move(r));
    }
    refresh(t_);
    for (auto& n : t_.nodes) {
      if (!n.is_view()) continue;
      std::string prefix = (t_.free_connex && n.kind == ViewKind::JoinOnly) ? "H@" : "V@";
      std::string at = n.at_var >= 0 ? q_.var_name(n.at_var) : "root";
      n.name = prefix + at + "_" + rel_names(q_, n.rels);
    }
  }

 private:
  ViewTree& t_;
  const Query& q_;
  const VariableOrder& o_;
};

ViewTree empty_tree(const Query& q, const VariableOrder& order) {
  q.validate();
  ViewTree t;
  t.query = q;
  t.order = order;
  t.enum_view.assign(q.num_vars(), -1);
  for (int i = 0; i < static_cast<int>(q.relations.size()); ++i) t.updatable.push_back(i);
  return t;
}

VarSet subtree_schema_vars(const ViewTree& t, int id) {
  VarSet v;
  for (int r : t.nodes[id].rels) v = vs_union(v, make_varset(t.query.relations[r].schema));
  return v;
}

}  // namespace

ViewTree build_view_tree(const Query& q, const VariableOrder& order) {
  ViewTree t = empty_tree(q, order);
  VarSet kept = q.free_lift_mode == FreeLiftMode::GroupBy ? q.free : VarSet{};
  Builder b(t);
  std::vector<int> tops;
  for (VarId r : order.roots) tops.push_back(b.plain(r, kept));
  b.finish_roots(tops);
  t.check();
  return t;
}

ViewTree build_free_connex_tree(const Query& q, const VariableOrder& order) {
  if (q.free_lift_mode != FreeLiftMode::GroupBy) throw Error("free-connex trees keep free variables as keys");
  if (!order.is_free_top(q.free)) throw Error("free-connex tree needs a free-top variable order");
  ViewTree t = empty_tree(q, order);
  t.free_connex = true;
  Builder b(t);
  std::vector<int> tops;
  bool siblings = order.roots.size() > 1;
  for (VarId r : order.roots) tops.push_back(b.free_connex(r, siblings));
  b.finish_roots(tops);

  // enumeration order: free variables top-down, left to right
  std::function<void(VarId)> walk = [&](VarId x) {
    if (!q.is_free(x)) return;
    t.enum_order.push_back(x);
    for (VarId c : order.children[x]) walk(c);
  };
  for (VarId r : order.roots) walk(r);

  // views consulted for payloads and enumeration are kept
  for (VarId x : t.enum_order) t.nodes[t.enum_view[x]].pinned = true;
  std::function<void(int)> mark = [&](int id) {
    ViewNode& n = t.nodes[id];
    if (vs_subset(n.keys, q.free) && vs_subset(vs_intersect(subtree_schema_vars(t, id), q.free), n.keys)) {
      n.pinned = true;
      return;
    }
    for (int c : n.children) mark(c);
  };
  mark(t.root);
  t.check();
  return t;
}

void add_indicator_projections(ViewTree& t) {
  const Query& q = t.query;
  for (int id : t.view_nodes()) {
    const ViewNode& n = t.nodes[id];
    std::vector<Hyperedge> edges;
    std::vector<VarSet> proj(q.relations.size());
    for (int occ = 0; occ < static_cast<int>(q.relations.size()); ++occ) {
      if (std::binary_search(n.rels.begin(), n.rels.end(), occ)) continue;
      proj[occ] = vs_intersect(make_varset(q.relations[occ].schema), n.keys);
      if (!proj[occ].empty()) edges.push_back({proj[occ], true, occ});
    }
    if (edges.empty()) continue;
    for (int r : n.rels) edges.push_back({make_varset(q.relations[r].schema), false, r});
    std::vector<int> chosen;
    for (const auto& e : gyo_reduce(edges))
      if (e.indicator) chosen.push_back(e.tag);
    std::sort(chosen.begin(), chosen.end());
    for (int occ : chosen) {
      ViewNode ind;
      ind.kind = ViewKind::Indicator;
      ind.leaf = occ;
      ind.keys = proj[occ];
      ind.schema = ind.keys;
      ind.name = "Exists[" + q.names(ind.keys) + "]" + occurrence_name(q, occ);
      ind.id = static_cast<int>(t.nodes.size());
      ind.parent = id;
      t.nodes.push_back(std::move(ind));
      t.nodes[id].children.push_back(t.nodes.back().id);
    }
  }
  refresh(t);
  t.check();
}

void choose_materialization(ViewTree& t, const std::vector<int>& updatable) {
  t.updatable = updatable;
  std::sort(t.updatable.begin(), t.updatable.end());
  t.updatable.erase(std::unique(t.updatable.begin(), t.updatable.end()), t.updatable.end());
  for (int u : t.updatable)
    if (u < 0 || u >= static_cast<int>(t.query.relations.size())) throw Error("updatable occurrence out of range");
  for (auto& n : t.nodes) n.materialized = n.pinned;
  t.nodes[t.root].materialized = true;
  for (int id : t.preorder()) {
    const ViewNode& n = t.nodes[id];
    for (int c : n.children) {
      bool need = false;
      for (int s : n.children)
        if (s != c && t.subtree_updatable(s)) need = true;
      if (need) t.nodes[c].materialized = true;
    }
  }
}

void compact_and_dedupe(ViewTree& t) {
  if (t.query.free_lift_mode == FreeLiftMode::RelationalPayload) return;
  std::vector<char> dead(t.nodes.size(), 0);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int id : t.preorder()) {
      ViewNode& n = t.nodes[id];
      if (n.children.size() != 1) continue;
      int cid = n.children[0];
      ViewNode& c = t.nodes[cid];
      if (n.kind == ViewKind::MarginalizeJoin && c.kind == ViewKind::MarginalizeJoin && c.children.size() == 1 &&
          !c.pinned && c.rels.size() == 1 && c.indicator_sources.empty()) {
        n.marg.insert(n.marg.begin(), c.marg.begin(), c.marg.end());
        n.children = c.children;
        t.nodes[n.children[0]].parent = id;
        dead[cid] = 1;
        changed = true;
        break;
      }
      if (n.kind == ViewKind::JoinOnly && !n.pinned && c.keys == n.keys && c.kind != ViewKind::Indicator) {
        c.materialized = n.materialized || c.pinned;
        c.parent = n.parent;
        if (n.parent >= 0) {
          for (int& x : t.nodes[n.parent].children)
            if (x == id) x = cid;
        } else {
          t.root = cid;
        }
        dead[id] = 1;
        changed = true;
        break;
      }
    }
  }
  // renumber the surviving nodes
  std::vector<int> remap(t.nodes.size(), -1);
  std::vector<ViewNode> kept;
  for (int id : t.preorder()) {
    remap[id] = static_cast<int>(kept.size());
    kept.push_back(t.nodes[id]);
  }
  for (auto& n : kept) {
    n.id = remap[n.id];
    for (int& c : n.children) c = remap[c];
  }
  for (int& e : t.enum_view)
    if (e >= 0) e = remap[e];
  t.root = remap[t.root];
  t.nodes = std::move(kept);
  refresh(t);
  t.check();
}

void plan_indices(ViewTree& t) {
  for (auto& n : t.nodes) {
    n.indices.clear();
    n.distinct_indices.clear();
    n.delta_plans.clear();
    if (n.stored()) n.indices.push_back({n.keys, IndexRole::Primary});
  }
  auto require = [&](int id, const VarSet& vars, IndexRole role) {
    ViewNode& n = t.nodes[id];
    if (vars.empty() || vars == n.keys || n.has_index(vars)) return;
    n.indices.push_back({vars, role});
  };

  for (int id : t.view_nodes()) {
    ViewNode& n = t.nodes[id];
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      DeltaPlan plan;
      VarSet bound = t.nodes[n.children[i]].keys;
      std::vector<int> rest;
      for (std::size_t j = 0; j < n.children.size(); ++j)
        if (j != i) rest.push_back(n.children[j]);
      while (!rest.empty()) {
        std::size_t best = 0;
        auto score = [&](int s) {
          const VarSet& k = t.nodes[s].keys;
          return std::make_pair(vs_intersect(k, bound).size(), vs_subset(k, bound));
        };
        for (std::size_t j = 1; j < rest.size(); ++j)
          if (score(rest[j]) > score(rest[best])) best = j;
        int s = rest[best];
        rest.erase(rest.begin() + static_cast<long>(best));
        plan.siblings.push_back(s);
        plan.probe.push_back(vs_intersect(t.nodes[s].keys, bound));
        bound = vs_union(bound, t.nodes[s].keys);
      }
      if (t.subtree_updatable(n.children[i]))
        for (std::size_t j = 0; j < plan.siblings.size(); ++j) require(plan.siblings[j], plan.probe[j], IndexRole::Update);
      n.delta_plans.push_back(std::move(plan));
    }
  }

  if (t.free_connex) {
    // prefix lookups from values fixed above
    for (int id : t.preorder()) {
      const ViewNode& n = t.nodes[id];
      if (n.parent < 0 || !n.stored()) continue;
      const ViewNode& p = t.nodes[n.parent];
      if (p.at_var < 0 || !t.query.is_free(p.at_var)) continue;
      require(id, vs_intersect(n.keys, vs_minus(p.keys, {p.at_var})), IndexRole::Secondary);
    }
    for (VarId x : t.enum_order) {
      int e = t.enum_view[x];
      VarSet group = vs_intersect(t.nodes[e].keys, t.order.ancestors(x));
      VarSet item = vs_union(group, {x});
      if (item == t.nodes[e].keys) {
        require(e, group, IndexRole::Enumeration);
      } else {
        auto& d = t.nodes[e].distinct_indices;
        if (std::find(d.begin(), d.end(), std::make_pair(group, item)) == d.end()) d.push_back({group, item});
      }
    }
  }
}

ViewTree compile(const Query& q, const VariableOrder& order, const CompileOptions& opt) {
  bool fc = false;
  switch (opt.shape) {
    case TreeShape::Plain: break;
    case TreeShape::FreeConnex: fc = true; break;
    case TreeShape::Auto:
      fc = q.free_lift_mode == FreeLiftMode::GroupBy && !q.free.empty() && order.is_free_top(q.free) &&
           classify(q).free_connex;
      break;
  }
  ViewTree t = fc ? build_free_connex_tree(q, order) : build_view_tree(q, order);
  if (opt.indicators && !fc) add_indicator_projections(t);
  std::vector<int> u = opt.updatable;
  if (opt.all_updatable) {
    u.clear();
    for (int i = 0; i < static_cast<int>(q.relations.size()); ++i) u.push_back(i);
  }
  choose_materialization(t, u);
  if (opt.materialize_all)
    for (auto& n : t.nodes)
      if (n.is_view()) n.materialized = true;
  if (opt.compact) compact_and_dedupe(t);
  plan_indices(t);
  return t;
}

}  // namespace fivm
