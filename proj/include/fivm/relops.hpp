#pragma once

#include <unordered_map>
#include <utility>
#include <vector>

#include "fivm/relation.hpp"

namespace fivm {

template <class R>
Relation<R> rel_union(const Relation<R>& a, const Relation<R>& b) {
  if (make_varset(a.schema()) != make_varset(b.schema())) throw Error("union over different schemas");
  Relation<R> out(a.ring(), a.schema(), a.counters());
  for (auto [k, v] : a) out.add(k, v);
  std::vector<int> pos = positions_of(b.schema(), a.schema());
  for (auto [k, v] : b) out.add(project(k, pos), v);
  return out;
}

/// Natural join; the result schema is s's schema followed by t's new variables.
template <class R>
Relation<R> rel_join(const Relation<R>& s, const Relation<R>& t) {
  const R& ring = s.ring();
  VarSet shared = vs_intersect(s.varset(), t.varset());
  std::vector<VarId> schema = s.schema();
  std::vector<int> t_new;
  for (std::size_t i = 0; i < t.schema().size(); ++i) {
    if (!vs_contains(shared, t.schema()[i])) {
      schema.push_back(t.schema()[i]);
      t_new.push_back(static_cast<int>(i));
    }
  }
  std::vector<int> s_pos = positions_of(s.schema(), shared);
  std::vector<int> t_pos = positions_of(t.schema(), shared);
  std::unordered_map<Tuple, std::vector<std::pair<const Tuple*, const typename R::Payload*>>, TupleHash> groups;
  for (auto [k, v] : t) groups[project(k, t_pos)].push_back({&k, &v});
  Relation<R> out(ring, schema, s.counters());
  for (auto [k, v] : s) {
    auto it = groups.find(project(k, s_pos));
    if (it == groups.end()) continue;
    for (const auto& [tk, tv] : it->second) {
      Tuple key = k;
      for (int p : t_new) key.push_back((*tk)[p]);
      out.add(key, ring.mul(v, *tv));
    }
  }
  return out;
}

/// Sums out `x`, multiplying each payload by the lifted x-value.
template <class R>
Relation<R> rel_marginalize(const Relation<R>& r, VarId x, const LiftingFunction& g) {
  auto it = std::find(r.schema().begin(), r.schema().end(), x);
  if (it == r.schema().end()) throw Error("marginalized variable not in schema");
  if (g.target != x) throw Error("lifting function targets another variable");
  int xp = static_cast<int>(it - r.schema().begin());
  std::vector<VarId> schema;
  std::vector<int> keep;
  for (std::size_t i = 0; i < r.schema().size(); ++i) {
    if (static_cast<int>(i) == xp) continue;
    schema.push_back(r.schema()[i]);
    keep.push_back(static_cast<int>(i));
  }
  const R& ring = r.ring();
  Relation<R> out(ring, schema, r.counters());
  for (auto [k, v] : r) out.add(project(k, keep), ring.mul(v, ring.lift(g, k[xp])));
  return out;
}

/// Supporter counts behind an indicator projection.
struct IndicatorState {
  VarSet schema;  // projection variables, sorted
  std::unordered_map<Tuple, std::int64_t, TupleHash> counts;

  /// Applies supporter changes and reports the support transitions
  /// (+1 when a count leaves 0, -1 when it returns to 0), netted per key.
  std::vector<std::pair<Tuple, int>> apply(const std::vector<std::pair<Tuple, int>>& changes) {
    std::unordered_map<Tuple, int, TupleHash> net;
    std::vector<Tuple> order;
    for (const auto& [t, d] : changes) {
      if (d != 1 && d != -1) throw Error("support change must be +1 or -1");
      auto it = counts.find(t);
      std::int64_t before = it == counts.end() ? 0 : it->second;
      std::int64_t after = before + d;
      if (after < 0) throw Error("indicator count underflow: maintenance is corrupted");
      if (after == 0) counts.erase(it);
      else if (it == counts.end()) counts.emplace(t, after);
      else it->second = after;
      int flip = (before == 0 && after > 0) ? 1 : (before > 0 && after == 0) ? -1 : 0;
      if (flip == 0) continue;
      auto [nit, fresh] = net.emplace(t, 0);
      if (fresh) order.push_back(t);
      nit->second += flip;
    }
    std::vector<std::pair<Tuple, int>> out;
    for (auto& t : order) {
      int d = net[t];
      if (d != 0) out.push_back({t, d});
    }
    return out;
  }
};

template <class R>
std::pair<Relation<R>, IndicatorState> indicator_project(const Relation<R>& r, const VarSet& a) {
  if (a.empty()) throw Error("indicator projection needs a non-empty variable set");
  IndicatorState st;
  st.schema = a;
  std::vector<int> pos = positions_of(r.schema(), a);
  Relation<R> out(r.ring(), a, r.counters());
  for (auto [k, v] : r) {
    Tuple p = project(k, pos);
    if (st.counts[p]++ == 0) out.add(p, r.ring().one());
  }
  return {std::move(out), std::move(st)};
}

/// Delta of the indicator relation caused by supporter changes.
template <class R>
Relation<R> indicator_delta(IndicatorState& st, const std::vector<std::pair<Tuple, int>>& changes, const R& ring,
                            OpCounters* ctr = nullptr) {
  Relation<R> out(ring, st.schema, ctr);
  for (const auto& [t, d] : st.apply(changes)) out.add(t, d > 0 ? ring.one() : ring.negate(ring.one()));
  return out;
}

/// Entries of `r` whose projection on `vars` equals `probe`, via an existing index.
template <class R, class F>
void prefix_enumerate(const Relation<R>& r, const VarSet& vars, const Tuple& probe, F&& f) {
  if (vars.size() == r.arity() && make_varset(r.schema()) == vars) {
    std::vector<int> pos = positions_of(vars, r.schema());
    Tuple key = project(probe, pos);
    if (const auto* p = r.find(key)) f(key, *p);
    return;
  }
  int idx = r.find_index(vars);
  if (idx < 0) throw Error("no index on the requested variables (index planning bug)");
  r.for_each_match(idx, probe, f);
}

}  // namespace fivm
