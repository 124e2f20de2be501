#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "fivm/relops.hpp"
#include "fivm/viewtree.hpp"

namespace fivm {

template <class R>
struct UpdateDelta {
  int leaf = -1;
  Relation<R> delta;
};

/// A delta given as a sum of products; each product lists factors over
/// disjoint variable sets that together cover the relation's schema.
template <class R>
struct FactorizedDelta {
  int leaf = -1;
  std::vector<std::vector<Relation<R>>> terms;
};

namespace detail {

/// Nested-loop join of a driver relation with further operands, each probed
/// on the variables bound so far (point lookup, index bucket or full scan).
/// Every combination is lifted on `lifts` and handed to `sink` keyed on `out_schema`.
template <class Ring>
class JoinKernel {
 public:
  using Rel = Relation<Ring>;
  using P = typename Ring::Payload;

  JoinKernel(const Ring& ring, std::size_t num_vars) : ring_(ring), vals_(num_vars, 0) {}

  template <class Sink>
  void run(const Rel& driver, const std::vector<Rel*>& ops, const std::vector<VarId>& out_schema,
           const std::vector<LiftingFunction>& lifts, Sink&& sink) {
    ops_.clear();
    VarSet bound = driver.varset();
    for (Rel* r : ops) {
      Op op;
      op.rel = r;
      VarSet keys = r->varset();
      op.probe = vs_intersect(keys, bound);
      if (op.probe.size() == keys.size()) {
        op.mode = Mode::Point;
      } else if (op.probe.empty()) {
        op.mode = Mode::Scan;
      } else {
        op.mode = Mode::Index;
        op.index = r->find_index(op.probe);
        if (op.index < 0) op.index = r->add_index(op.probe);
      }
      for (std::size_t i = 0; i < r->schema().size(); ++i)
        if (!vs_contains(bound, r->schema()[i])) op.fresh.push_back({static_cast<int>(i), r->schema()[i]});
      bound = vs_union(bound, keys);
      ops_.push_back(std::move(op));
    }
    out_ = &out_schema;
    lifts_ = &lifts;
    const auto& ds = driver.schema();
    auto emit = [&](const Tuple& k, const P& p) {
      for (std::size_t i = 0; i < ds.size(); ++i) vals_[ds[i]] = k[i];
      step(0, p, sink);
    };
    driver.for_each(emit);
  }

 private:
  enum class Mode { Point, Scan, Index };
  struct Op {
    Rel* rel = nullptr;
    Mode mode = Mode::Scan;
    int index = -1;
    VarSet probe;
    std::vector<std::pair<int, VarId>> fresh;
  };

  template <class Sink>
  void step(std::size_t i, const P& acc, Sink& sink) {
    if (i == ops_.size()) {
      Tuple key(out_->size());
      for (std::size_t j = 0; j < key.size(); ++j) key[j] = vals_[(*out_)[j]];
      P p = acc;
      for (const auto& f : *lifts_) p = ring_.mul(p, ring_.lift(f, vals_[f.target]));
      sink(key, p);
      return;
    }
    Op& op = ops_[i];
    auto visit = [&](const Tuple& k, const P& v) {
      for (const auto& [pos, var] : op.fresh) vals_[var] = k[pos];
      step(i + 1, ring_.mul(acc, v), sink);
    };
    switch (op.mode) {
      case Mode::Point: {
        const auto& s = op.rel->schema();
        Tuple key(s.size());
        for (std::size_t j = 0; j < s.size(); ++j) key[j] = vals_[s[j]];
        if (const P* v = op.rel->find(key)) visit(key, *v);
        break;
      }
      case Mode::Scan: op.rel->for_each(visit); break;
      case Mode::Index: {
        Tuple probe(op.probe.size());
        for (std::size_t j = 0; j < probe.size(); ++j) probe[j] = vals_[op.probe[j]];
        op.rel->for_each_match(op.index, probe, visit);
        break;
      }
    }
  }

  const Ring& ring_;
  std::vector<Value> vals_;
  std::vector<Op> ops_;
  const std::vector<VarId>* out_ = nullptr;
  const std::vector<LiftingFunction>* lifts_ = nullptr;
};

/// Cartesian product of relations over disjoint schemas, laid out on `schema`.
template <class Ring>
Relation<Ring> expand_product(const std::vector<const Relation<Ring>*>& factors, const std::vector<VarId>& schema,
                              const Ring& ring, OpCounters* ctr) {
  Relation<Ring> out(ring, schema, ctr);
  std::vector<std::vector<std::pair<int, int>>> place(factors.size());  // (factor column, output column)
  for (std::size_t f = 0; f < factors.size(); ++f)
    for (std::size_t c = 0; c < factors[f]->schema().size(); ++c) {
      auto it = std::find(schema.begin(), schema.end(), factors[f]->schema()[c]);
      if (it == schema.end()) throw Error("factor variable outside the target schema");
      place[f].push_back({static_cast<int>(c), static_cast<int>(it - schema.begin())});
    }
  Tuple key(schema.size());
  std::function<void(std::size_t, const typename Ring::Payload&)> go = [&](std::size_t f,
                                                                          const typename Ring::Payload& acc) {
    if (f == factors.size()) {
      out.add(key, acc);
      return;
    }
    factors[f]->for_each([&](const Tuple& k, const typename Ring::Payload& v) {
      for (auto [c, o] : place[f]) key[o] = k[c];
      go(f + 1, ring.mul(acc, v));
    });
  };
  go(0, ring.one());
  return out;
}

template <class Ring>
std::vector<VarId> sorted_schema(const Relation<Ring>& r) {
  return r.varset();
}

}  // namespace detail

namespace detail {

/// Hash join that counts the scan of both inputs.
template <class Ring>
Relation<Ring> counted_join(const Relation<Ring>& a, const Relation<Ring>& b, OpCounters* ctr) {
  if (ctr) ctr->reads += a.size() + b.size();
  Relation<Ring> out = rel_join(a, b);
  out.set_counters(ctr);
  if (ctr) ctr->writes += out.size();
  return out;
}

/// Joins `rels` (the first is the driver) and sums out `lifted` variables
/// as soon as no remaining input mentions them.
template <class Ring>
Relation<Ring> join_and_sum(std::vector<const Relation<Ring>*> rels, const std::map<VarId, LiftingFunction>& lifted,
                            const Ring& ring, OpCounters* ctr) {
  Relation<Ring> acc(ring, {}, ctr);
  acc.add({}, ring.one());
  std::vector<char> used(rels.size(), 0);
  for (std::size_t step = 0; step < rels.size(); ++step) {
    // next input: the first one, then the unused one sharing most variables
    std::size_t pick = 0;
    if (step > 0) {
      long best = -1;
      for (std::size_t i = 0; i < rels.size(); ++i) {
        if (used[i]) continue;
        long s = static_cast<long>(vs_intersect(acc.varset(), rels[i]->varset()).size());
        if (s > best) best = s, pick = i;
      }
    }
    used[pick] = 1;
    acc = counted_join(acc, *rels[pick], ctr);
    VarSet still;
    for (std::size_t i = 0; i < rels.size(); ++i)
      if (!used[i]) still = vs_union(still, rels[i]->varset());
    for (VarId v : acc.varset()) {
      auto it = lifted.find(v);
      if (it != lifted.end() && !vs_contains(still, v)) acc = rel_marginalize(acc, v, it->second);
    }
  }
  return acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Materialized state of one view tree

template <class R>
class Runtime {
 public:
  using CR = CountedRing<R>;
  using CP = typename CR::Payload;
  using View = Relation<CR>;
  using Base = typename R::Payload;

  Runtime(ViewTree tree, const R& ring)
      : tree_(std::move(tree)), ring_(std::make_unique<CR>(ring, tree_.free_connex)) {
    store_.resize(tree_.nodes.size());
    istate_.resize(tree_.nodes.size());
    for (const auto& n : tree_.nodes)
      if (n.stored()) store_[n.id] = std::make_unique<View>(*ring_, n.schema, &ctr_);
    for (const auto& n : tree_.nodes)
      if (n.stored()) make_indices(n);
  }
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const ViewTree& tree() const { return tree_; }
  const CR& ring() const { return *ring_; }
  const R& base_ring() const { return ring_->base(); }
  OpCounters& counters() { return ctr_; }
  const OpCounters& counters() const { return ctr_; }

  /// Stored relation of a node, or nullptr when the node is transient.
  const View* stored(int node) const { return store_.at(node).get(); }
  const View& leaf(int occurrence) const { return *store_.at(tree_.leaf_node.at(occurrence)); }
  const View& root() const { return *store_.at(tree_.root); }

  /// Topmost views whose keys hold every free variable below them; their
  /// join is the result of a free-connex tree.
  std::vector<int> payload_views() const {
    std::vector<int> out;
    std::function<void(int)> go = [&](int id) {
      const ViewNode& n = tree_.nodes[id];
      VarSet below;
      for (const auto& m : tree_.nodes)
        if (m.kind == ViewKind::Leaf && std::binary_search(n.rels.begin(), n.rels.end(), m.leaf))
          below = vs_union(below, m.keys);
      if (vs_subset(vs_intersect(below, tree_.query.free), n.keys) && vs_subset(n.keys, tree_.query.free)) {
        out.push_back(id);
        return;
      }
      for (int c : n.children) go(c);
    };
    go(tree_.root);
    return out;
  }

  /// Full result in the base ring (keys with a zero payload are left out).
  Relation<R> result() const {
    if (!tree_.free_connex) return to_base(root());
    std::vector<const View*> parts;
    for (int id : payload_views()) parts.push_back(need_stored(id));
    View j = detail::join_and_sum(parts, {}, *ring_, nullptr);
    Relation<R> out(ring_->base(), j.schema());
    for (auto [k, p] : j)
      if (!ring_->base().is_zero(p.p)) out.add(k, p.p);
    return out;
  }
  Relation<R> to_base(const View& v) const {
    Relation<R> out(ring_->base(), v.schema());
    for (auto [k, p] : v) out.add(k, p.p);
    return out;
  }
  Relation<R> leaf_contents(int occurrence) const { return to_base(leaf(occurrence)); }

  /// Keeps the per-view deltas of the next propagations (for inspection).
  void set_trace(bool on) {
    tracing_ = on;
    trace_.clear();
  }
  const std::vector<std::pair<int, View>>& trace() const { return trace_; }

  /// Initial database, one relation per occurrence; computes every stored view bottom-up.
  void load(const std::vector<Relation<R>>& db) {
    if (db.size() != tree_.query.relations.size()) throw Error("database does not match the relation occurrences");
    for (std::size_t occ = 0; occ < db.size(); ++occ) {
      View& l = *store_[tree_.leaf_node[occ]];
      l.clear();
      std::vector<int> pos = positions_of(db[occ].schema(), l.schema());
      for (auto [k, p] : db[occ]) l.add(project(k, pos), ring_->wrap(p, 1));
    }
    for (int id : tree_.indicator_nodes()) {
      const ViewNode& n = tree_.nodes[id];
      auto [ind, st] = indicator_project(leaf(n.leaf), n.keys);
      View& s = *store_[id];
      s.clear();
      for (auto [k, p] : ind) s.add(k, p);
      istate_[id] = std::move(st);
    }
    std::vector<std::unique_ptr<View>> temps;
    evaluate(tree_.root, temps);
  }

  /// Applies a delta to one relation occurrence and maintains every stored view.
  void update(int occurrence, const Relation<R>& delta) {
    if (!tree_.is_updatable(occurrence)) throw Error("relation occurrence " + std::to_string(occurrence) + " is not updatable");
    int lid = tree_.leaf_node.at(occurrence);
    const View& l = *store_[lid];
    std::vector<int> pos = positions_of(delta.schema(), l.schema());
    View d(*ring_, l.schema(), nullptr);
    for (auto [k, p] : delta) d.add(project(k, pos), ring_->wrap(p, 0));
    propagate_leaf(lid, d);
  }

  /// Delta given in the relation's column order, applied to every occurrence.
  void update_relation(const std::string& name, const Relation<R>& delta) {
    for (int occ : tree_.query.occurrences_of(name)) {
      Relation<R> d(ring_->base(), tree_.query.relations[occ].schema);
      if (d.arity() != delta.arity()) throw Error("delta arity does not match relation " + name);
      for (auto [k, p] : delta) d.add(k, p);
      update(occ, d);
    }
  }

  /// Occurrences are processed in id order; deltas of one occurrence are summed first.
  void update_batch(const std::vector<UpdateDelta<R>>& batch) {
    std::map<int, std::vector<const Relation<R>*>> by_leaf;
    for (const auto& u : batch) by_leaf[u.leaf].push_back(&u.delta);
    for (auto& [occ, ds] : by_leaf) {
      if (ds.size() == 1) {
        update(occ, *ds[0]);
        continue;
      }
      Relation<R> sum(ring_->base(), ds[0]->schema());
      for (const auto* d : ds) {
        std::vector<int> pos = positions_of(d->schema(), sum.schema());
        for (auto [k, p] : *d) sum.add(project(k, pos), p);
      }
      update(occ, sum);
    }
  }

  /// Propagates each product term with summations pushed into the smallest
  /// scope; products stay unexpanded until a stored view needs them.
  void update_factorized(const FactorizedDelta<R>& f) {
    if (!tree_.is_updatable(f.leaf)) throw Error("relation occurrence " + std::to_string(f.leaf) + " is not updatable");
    int lid = tree_.leaf_node.at(f.leaf);
    VarSet leaf_vars = tree_.nodes[lid].keys;
    for (const auto& term : f.terms) {
      VarSet seen;
      for (const auto& fac : term) {
        if (!vs_intersect(seen, fac.varset()).empty()) throw Error("factors of a product must have disjoint schemas");
        seen = vs_union(seen, fac.varset());
      }
      if (seen != leaf_vars) throw Error("factors do not cover the relation schema");
      std::vector<View> factors;
      for (const auto& fac : term) {
        View v(*ring_, fac.schema(), nullptr);
        for (auto [k, p] : fac) v.add(k, ring_->wrap(p, 0));
        factors.push_back(std::move(v));
      }
      if (ring_->tracking()) {
        std::vector<const View*> ptrs;
        for (const auto& v : factors) ptrs.push_back(&v);
        View d = detail::expand_product(ptrs, tree_.nodes[lid].schema, *ring_, nullptr);
        propagate_leaf(lid, d);
      } else {
        propagate_factorized(lid, std::move(factors));
      }
    }
  }

 private:
  void make_indices(const ViewNode& n) {
    View& v = *store_[n.id];
    for (const auto& ix : n.indices)
      if (!ix.vars.empty() && ix.vars != n.keys) v.add_index(ix.vars);
    for (const auto& [g, i] : n.distinct_indices) v.add_distinct_index(g, i);
  }

  View* need_stored(int id) const {
    View* v = store_.at(id).get();
    if (!v) throw Error("view " + tree_.nodes[id].name + " is needed by a delta but not materialized (planning bug)");
    return v;
  }

  const View& evaluate(int id, std::vector<std::unique_ptr<View>>& temps) {
    const ViewNode& n = tree_.nodes[id];
    if (!n.is_view()) return *store_[id];
    std::vector<View*> kids;
    for (int c : n.children) kids.push_back(const_cast<View*>(&evaluate(c, temps)));
    std::map<int, View*> by_id;
    for (std::size_t i = 0; i < n.children.size(); ++i) by_id[n.children[i]] = kids[i];
    std::vector<View*> ops;
    for (int s : n.delta_plans[0].siblings) ops.push_back(by_id.at(s));
    View out(*ring_, n.schema, &ctr_);
    detail::JoinKernel<CR> k(*ring_, tree_.query.num_vars());
    k.run(*kids[0], ops, n.schema, n.marg, [&](const Tuple& key, const CP& p) { out.add(key, p); });
    if (n.materialized) {
      View& s = *store_[id];
      s.clear();
      for (auto [key, p] : out) s.add(key, p);
      return s;
    }
    temps.push_back(std::make_unique<View>(std::move(out)));
    return *temps.back();
  }

  /// Delta of `parent` caused by delta `d` of its child `child`.
  View step_delta(int parent, int child, const View& d) {
    const ViewNode& n = tree_.nodes[parent];
    auto it = std::find(n.children.begin(), n.children.end(), child);
    const DeltaPlan& plan = n.delta_plans.at(static_cast<std::size_t>(it - n.children.begin()));
    std::vector<View*> ops;
    for (int s : plan.siblings) ops.push_back(need_stored(s));
    View out(*ring_, n.schema, nullptr);
    detail::JoinKernel<CR> k(*ring_, tree_.query.num_vars());
    k.run(d, ops, n.schema, n.marg, [&](const Tuple& key, const CP& p) { out.add(key, p); });
    return out;
  }

  /// Deltas along the path above `start` against the current state, then applied.
  void propagate_path(int start, const View& d) {
    std::vector<std::pair<int, View>> path;
    const View* cur = &d;
    int child = start;
    for (int p = tree_.nodes[start].parent; p >= 0 && !cur->empty(); child = p, p = tree_.nodes[p].parent) {
      path.emplace_back(p, step_delta(p, child, *cur));
      cur = &path.back().second;
    }
    for (auto& [id, dv] : path) {
      if (View* s = store_[id].get())
        for (auto [k, p] : dv) s->add(k, p);
      if (tracing_) trace_.emplace_back(id, dv);
    }
  }

  /// Leaf delta with base payloads; derivation counts are filled in here.
  void propagate_leaf(int lid, View& d) {
    View& l = *store_[lid];
    std::vector<std::pair<Tuple, int>> support;
    View dn(*ring_, l.schema(), nullptr);
    const R& base = ring_->base();
    for (auto [k, p] : d) {
      const CP* old = l.find(k);
      Base now = old ? base.add(old->p, p.p) : p.p;
      bool was = old != nullptr;
      bool is = !base.is_zero(now);
      dn.add(k, ring_->wrap(p.p, static_cast<std::int64_t>(is) - static_cast<std::int64_t>(was)));
      if (was != is) support.push_back({k, is ? 1 : -1});
    }
    if (tracing_) trace_.emplace_back(lid, dn);
    propagate_path(lid, dn);
    for (auto [k, p] : dn) l.add(k, p);
    propagate_indicators(tree_.nodes[lid].leaf, l.schema(), support);
  }

  void propagate_indicators(int occurrence, const std::vector<VarId>& schema,
                            const std::vector<std::pair<Tuple, int>>& support) {
    if (support.empty()) return;
    for (int id : tree_.indicator_nodes()) {
      const ViewNode& n = tree_.nodes[id];
      if (n.leaf != occurrence) continue;
      std::vector<int> pos = positions_of(schema, n.schema);
      std::vector<std::pair<Tuple, int>> proj;
      for (const auto& [t, s] : support) proj.push_back({project(t, pos), s});
      View di = indicator_delta(istate_[id], proj, *ring_, nullptr);
      if (di.empty()) continue;
      if (tracing_) trace_.emplace_back(id, di);
      propagate_path(id, di);
      for (auto [k, p] : di) store_[id]->add(k, p);
    }
  }

  void propagate_factorized(int lid, std::vector<View> factors) {
    std::vector<std::pair<int, std::vector<View>>> pending;
    int child = lid;
    std::vector<View> cur = factors;
    for (int p = tree_.nodes[lid].parent; p >= 0; child = p, p = tree_.nodes[p].parent) {
      cur = factorized_step(p, child, std::move(cur));
      bool zero = std::any_of(cur.begin(), cur.end(), [](const View& v) { return v.empty(); });
      if (zero) break;
      if (store_[p] || tracing_) pending.emplace_back(p, cur);
    }
    for (auto& [id, fs] : pending) {
      std::vector<const View*> ptrs;
      for (const auto& v : fs) ptrs.push_back(&v);
      View dv = detail::expand_product(ptrs, tree_.nodes[id].schema, *ring_, nullptr);
      if (View* s = store_[id].get())
        for (auto [k, pl] : dv) s->add(k, pl);
      if (tracing_) trace_.emplace_back(id, std::move(dv));
    }
    std::vector<const View*> ptrs;
    for (const auto& v : factors) ptrs.push_back(&v);
    View d = detail::expand_product(ptrs, tree_.nodes[lid].schema, *ring_, nullptr);
    View& l = *store_[lid];
    std::vector<std::pair<Tuple, int>> support;
    const R& base = ring_->base();
    for (auto [k, p] : d) {
      const CP* old = l.find(k);
      bool was = old != nullptr;
      bool is = !base.is_zero(old ? base.add(old->p, p.p) : p.p);
      if (was != is) support.push_back({k, is ? 1 : -1});
    }
    for (auto [k, p] : d) l.add(k, p);
    propagate_indicators(tree_.nodes[lid].leaf, l.schema(), support);
  }

  /// Groups factors and siblings that share variables; each group is joined
  /// and its locally summed variables eliminated, the groups stay a product.
  std::vector<View> factorized_step(int parent, int child, std::vector<View> factors) {
    const ViewNode& n = tree_.nodes[parent];
    std::vector<View*> operands;
    std::vector<char> is_factor;
    for (auto& f : factors) {
      operands.push_back(&f);
      is_factor.push_back(1);
    }
    for (int s : n.children) {
      if (s == child) continue;
      operands.push_back(need_stored(s));
      is_factor.push_back(0);
    }
    std::size_t m = operands.size();
    std::vector<std::size_t> comp(m);
    std::iota(comp.begin(), comp.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) { return comp[x] == x ? x : comp[x] = find(comp[x]); };
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j)
        if (!vs_intersect(operands[i]->varset(), operands[j]->varset()).empty()) comp[find(i)] = find(j);
    std::vector<View> out;
    std::vector<char> done(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t c = find(i);
      if (done[c]) continue;
      done[c] = 1;
      std::vector<std::size_t> members;
      for (std::size_t j = 0; j < m; ++j)
        if (find(j) == c) members.push_back(j);
      VarSet vars;
      for (std::size_t j : members) vars = vs_union(vars, operands[j]->varset());
      std::vector<LiftingFunction> lifts;
      for (const auto& f : n.marg)
        if (vs_contains(vars, f.target)) lifts.push_back(f);
      if (members.size() == 1 && lifts.empty() && is_factor[members[0]]) {
        out.push_back(std::move(*operands[members[0]]));
        continue;
      }
      // drive from the smallest factor (or the only operand), then greedy overlap
      std::size_t driver = members[0];
      for (std::size_t j : members)
        if (is_factor[j] && (!is_factor[driver] || operands[j]->size() < operands[driver]->size())) driver = j;
      std::vector<std::size_t> rest;
      for (std::size_t j : members)
        if (j != driver) rest.push_back(j);
      VarSet bound = operands[driver]->varset();
      std::vector<View*> ops;
      while (!rest.empty()) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < rest.size(); ++j)
          if (vs_intersect(operands[rest[j]]->varset(), bound).size() >
              vs_intersect(operands[rest[best]]->varset(), bound).size())
            best = j;
        ops.push_back(operands[rest[best]]);
        bound = vs_union(bound, operands[rest[best]]->varset());
        rest.erase(rest.begin() + static_cast<long>(best));
      }
      VarSet kept = vs_intersect(vars, n.keys);
      View res(*ring_, kept, nullptr);
      detail::JoinKernel<CR> k(*ring_, tree_.query.num_vars());
      k.run(*operands[driver], ops, kept, lifts, [&](const Tuple& key, const CP& p) { res.add(key, p); });
      out.push_back(std::move(res));
    }
    return out;
  }

  ViewTree tree_;
  std::unique_ptr<CR> ring_;
  OpCounters ctr_;
  std::vector<std::unique_ptr<View>> store_;
  std::vector<IndicatorState> istate_;
  bool tracing_ = false;
  std::vector<std::pair<int, View>> trace_;
};

// ---------------------------------------------------------------------------
// Oracles and baseline engines


/// Naive evaluation: join every occurrence, lift the aggregated variables, group by the rest.
template <class R>
Relation<R> recompute_oracle(const Query& q, const std::vector<Relation<R>>& leaves, const R& ring,
                             OpCounters* ctr = nullptr) {
  std::vector<const Relation<R>*> rels;
  for (const auto& l : leaves) rels.push_back(&l);
  std::map<VarId, LiftingFunction> lifted;
  for (VarId v : q.lifted_vars()) lifted[v] = q.lift_of(v);
  Relation<R> r = detail::join_and_sum(rels, lifted, ring, ctr);
  VarSet keep = q.free_lift_mode == FreeLiftMode::GroupBy ? q.free : VarSet{};
  if (r.varset() != keep) throw Error("oracle result schema mismatch");
  return r;
}

/// From-scratch content of one node, computed from the stored relations of
/// the leaves below it (indicators are re-derived from their sources).
template <class R>
typename Runtime<R>::View view_oracle(const Runtime<R>& rt, int node) {
  using View = typename Runtime<R>::View;
  const ViewTree& t = rt.tree();
  const ViewNode& n = t.node(node);
  if (n.kind == ViewKind::Leaf) return *rt.stored(node);
  if (n.kind == ViewKind::Indicator) return indicator_project(rt.leaf(n.leaf), n.keys).first;
  std::vector<View> inputs;
  std::map<VarId, LiftingFunction> lifted;
  std::function<void(int)> collect = [&](int id) {
    const ViewNode& c = t.node(id);
    if (!c.is_view()) {
      inputs.push_back(view_oracle(rt, id));
      return;
    }
    for (const auto& f : c.marg) lifted[f.target] = f;
    for (int k : c.children) collect(k);
  };
  collect(node);
  std::vector<const View*> ptrs;
  for (const auto& v : inputs) ptrs.push_back(&v);
  View r = detail::join_and_sum(ptrs, lifted, rt.ring(), nullptr);
  View out(rt.ring(), n.schema);
  std::vector<int> pos = positions_of(r.schema(), n.schema);
  for (auto [k, p] : r) out.add(project(k, pos), p);
  return out;
}

/// Compares every stored node with its from-scratch content.
template <class R>
bool check_against_oracle(const Runtime<R>& rt, double tol, std::string* why) {
  for (const auto& n : rt.tree().nodes) {
    const auto* s = rt.stored(n.id);
    if (!s) continue;
    std::string w;
    if (!same_content(*s, view_oracle(rt, n.id), tol, &w)) {
      if (why) *why = n.name + ": " + w;
      return false;
    }
    if (!s->check_indices()) {
      if (why) *why = n.name + ": index out of sync";
      return false;
    }
  }
  return true;
}

/// Keeps only the relations and the result; each delta is joined with the
/// full inputs from scratch.
template <class R>
class FirstOrderEngine {
 public:
  FirstOrderEngine(const Query& q, const R& ring)
      : q_(q), ring_(std::make_unique<R>(ring)), result_(*ring_, result_schema(q), &ctr_) {
    for (const auto& r : q.relations) leaves_.emplace_back(*ring_, r.schema, &ctr_);
    for (VarId v : q.lifted_vars()) lifted_[v] = q.lift_of(v);
  }

  void load(const std::vector<Relation<R>>& db) {
    for (std::size_t i = 0; i < db.size(); ++i) {
      leaves_[i].clear();
      for (auto [k, p] : db[i]) leaves_[i].add(k, p);
    }
    result_ = recompute_oracle(q_, leaves_, *ring_, &ctr_);
    result_.set_counters(&ctr_);
  }

  void update(int occurrence, const Relation<R>& delta) {
    std::vector<const Relation<R>*> rels{&delta};
    for (std::size_t i = 0; i < leaves_.size(); ++i)
      if (static_cast<int>(i) != occurrence) rels.push_back(&leaves_[i]);
    Relation<R> dq = detail::join_and_sum(rels, lifted_, *ring_, &ctr_);
    std::vector<int> pos = positions_of(dq.schema(), result_.schema());
    for (auto [k, p] : dq) result_.add(project(k, pos), p);
    std::vector<int> lpos = positions_of(delta.schema(), leaves_[occurrence].schema());
    for (auto [k, p] : delta) leaves_[occurrence].add(project(k, lpos), p);
  }

  const Relation<R>& result() const { return result_; }
  const Relation<R>& leaf(int occurrence) const { return leaves_.at(occurrence); }
  OpCounters& counters() { return ctr_; }

 private:
  static std::vector<VarId> result_schema(const Query& q) {
    return q.free_lift_mode == FreeLiftMode::GroupBy ? q.free : VarSet{};
  }
  Query q_;
  std::unique_ptr<R> ring_;
  OpCounters ctr_;
  std::vector<Relation<R>> leaves_;
  std::map<VarId, LiftingFunction> lifted_;
  Relation<R> result_;
};

/// Recomputes the result from scratch after every batch.
template <class R>
class ReevaluationEngine {
 public:
  ReevaluationEngine(const Query& q, const R& ring)
      : q_(q), ring_(std::make_unique<R>(ring)), result_(*ring_, {}) {
    for (const auto& r : q.relations) leaves_.emplace_back(*ring_, r.schema, &ctr_);
  }
  void load(const std::vector<Relation<R>>& db) {
    for (std::size_t i = 0; i < db.size(); ++i) {
      leaves_[i].clear();
      for (auto [k, p] : db[i]) leaves_[i].add(k, p);
    }
    refresh();
  }
  /// Applies the delta without recomputing; call refresh() at the end of a batch.
  void apply(int occurrence, const Relation<R>& delta) {
    std::vector<int> pos = positions_of(delta.schema(), leaves_[occurrence].schema());
    for (auto [k, p] : delta) leaves_[occurrence].add(project(k, pos), p);
  }
  void refresh() { result_ = recompute_oracle(q_, leaves_, *ring_, &ctr_); }
  const Relation<R>& result() const { return result_; }
  const Relation<R>& leaf(int occurrence) const { return leaves_.at(occurrence); }
  OpCounters& counters() { return ctr_; }

 private:
  Query q_;
  std::unique_ptr<R> ring_;
  OpCounters ctr_;
  std::vector<Relation<R>> leaves_;
  Relation<R> result_;
};

}  // namespace fivm
