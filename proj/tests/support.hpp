#pragma once

// Hand-rolled random generators shared by the property tests.

#include <map>
#include <random>
#include <type_traits>

#include "fivm/query.hpp"
#include "fivm/rings.hpp"

namespace fivm::testing {

using Rng = std::mt19937_64;

inline int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <class S>
RelationalPayload<S> random_relational(Rng& rng, const RelationalRing<S>& ring, int max_entries = 3) {
  std::vector<std::pair<GTuple, S>> v;
  int n = uniform(rng, 0, max_entries);
  for (int i = 0; i < n; ++i) {
    GTuple k;
    for (VarId var = 0; var < 3; ++var)
      if (uniform(rng, 0, 2) == 0) k.push_back({var, uniform(rng, 0, 2)});
    v.push_back({k, static_cast<S>(uniform(rng, -3, 3))});
  }
  return ring.normalize(std::move(v));
}

/// Integer-valued payloads so that real arithmetic stays exact.
template <class R>
typename R::Payload random_payload(Rng& rng, const R& ring) {
  if constexpr (std::is_same_v<R, IntegerRing>) {
    return uniform(rng, -5, 5);
  } else if constexpr (std::is_same_v<R, RealRing>) {
    return static_cast<double>(uniform(rng, -5, 5));
  } else if constexpr (std::is_same_v<R, RelationalIntRing> || std::is_same_v<R, RelationalRealRing>) {
    return random_relational(rng, ring);
  } else {
    using B = typename R::B;
    auto base_val = [&]() -> B {
      if constexpr (std::is_same_v<B, double>) return static_cast<double>(uniform(rng, -4, 4));
      else return random_relational(rng, ring.base(), 2);
    };
    typename R::Payload p;
    p.c = base_val();
    std::vector<std::pair<int, B>> s;
    std::vector<std::pair<std::pair<int, int>, B>> q;
    for (int i = 0; i < ring.degree(); ++i)
      if (uniform(rng, 0, 1)) s.push_back({i, base_val()});
    for (int i = 0; i < ring.degree(); ++i)
      for (int j = i; j < ring.degree(); ++j)
        if (uniform(rng, 0, 2) == 0) q.push_back({{i, j}, base_val()});
    // drop zero components so the sparse invariant holds
    for (auto& e : s)
      if (!ring.base().is_zero(e.second)) p.s.push_back(e);
    for (auto& e : q)
      if (!ring.base().is_zero(e.second)) p.q.push_back(e);
    return p;
  }
}

enum class Shape { Star, Chain, Snowflake, Triangle, FourLoop };
inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::Star: return "star";
    case Shape::Chain: return "chain";
    case Shape::Snowflake: return "snowflake";
    case Shape::Triangle: return "triangle";
    case Shape::FourLoop: return "4-loop";
  }
  return "?";
}

/// Random join query of the given shape: at most 5 relations and 8 variables.
/// Chains are sometimes self-joins of a single edge relation. The free set is
/// random; lifts are completed with ToOne.
inline Query random_query(Rng& rng, Shape shape) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rels;
  auto v = [](int i) { return std::string(1, static_cast<char>('A' + i)); };
  int next = 0;
  auto fresh = [&] { return v(next++); };
  switch (shape) {
    case Shape::Star: {
      std::string p = fresh();
      int k = uniform(rng, 2, 4);
      for (int i = 0; i < k; ++i) {
        std::vector<std::string> sch{p, fresh()};
        if (next < 8 && uniform(rng, 0, 2) == 0) sch.push_back(fresh());
        rels.push_back({"R" + std::to_string(i), sch});
      }
      break;
    }
    case Shape::Chain: {
      int k = uniform(rng, 2, 5);
      bool self = uniform(rng, 0, 2) == 0;
      std::string prev = fresh();
      for (int i = 0; i < k; ++i) {
        std::string nx = fresh();
        rels.push_back({self ? "E" : "R" + std::to_string(i), {prev, nx}});
        prev = nx;
      }
      break;
    }
    case Shape::Snowflake: {
      std::string p = fresh();
      int arms = uniform(rng, 2, 3);
      int r = 0;
      for (int i = 0; i < arms && r < 5; ++i) {
        std::string x = fresh();
        rels.push_back({"R" + std::to_string(r++), {p, x}});
        if (r < 5 && next < 8 && uniform(rng, 0, 1)) rels.push_back({"R" + std::to_string(r++), {x, fresh()}});
      }
      break;
    }
    case Shape::Triangle: {
      std::string a = fresh(), b = fresh(), c = fresh();
      rels = {{"R", {a, b}}, {"S", {b, c}}, {"T", {c, a}}};
      for (auto& r : rels)
        if (uniform(rng, 0, 3) == 0) r.second.push_back(fresh());
      break;
    }
    case Shape::FourLoop: {
      std::string a = fresh(), b = fresh(), c = fresh(), d = fresh();
      rels = {{"R", {a, b}}, {"S", {b, c}}, {"T", {c, d}}, {"U", {d, a}}};
      if (uniform(rng, 0, 1)) rels.push_back({"W", {a, c}});
      break;
    }
  }
  std::vector<std::string> all;
  for (int i = 0; i < next; ++i) all.push_back(v(i));
  std::vector<std::string> free;
  for (const auto& x : all)
    if (uniform(rng, 0, 2) == 0) free.push_back(x);
  return Query::make(rels, free);
}

}  // namespace fivm::testing

#include "fivm/relation.hpp"

namespace fivm::testing {

/// One random relation per occurrence (self-join occurrences share contents).
template <class R>
std::vector<Relation<R>> random_db(Rng& rng, const Query& q, const R& ring, int max_tuples, int domain) {
  std::vector<Relation<R>> db;
  std::map<std::string, int> first;
  for (std::size_t i = 0; i < q.relations.size(); ++i) {
    const auto& occ = q.relations[i];
    auto it = first.find(occ.name);
    if (it != first.end()) {
      Relation<R> copy(ring, occ.schema);
      for (auto [k, p] : db[it->second]) copy.add(k, p);
      db.push_back(std::move(copy));
      continue;
    }
    first[occ.name] = static_cast<int>(i);
    Relation<R> r(ring, occ.schema);
    int n = uniform(rng, 0, max_tuples);
    for (int t = 0; t < n; ++t) {
      Tuple k;
      for (std::size_t c = 0; c < occ.schema.size(); ++c) k.push_back(uniform(rng, 0, domain - 1));
      r.add(k, random_payload(rng, ring));
    }
    db.push_back(std::move(r));
  }
  return db;
}

/// Random delta over the schema of one occurrence; about half the tuples
/// retract existing ones.
template <class R>
Relation<R> random_delta(Rng& rng, const Relation<R>& current, const R& ring, int max_tuples, int domain) {
  Relation<R> d(ring, current.schema());
  std::vector<std::pair<Tuple, typename R::Payload>> existing;
  for (auto [k, p] : current) existing.push_back({k, p});
  int n = uniform(rng, 1, max_tuples);
  for (int t = 0; t < n; ++t) {
    if (!existing.empty() && uniform(rng, 0, 1)) {
      const auto& [k, p] = existing[uniform(rng, 0, static_cast<int>(existing.size()) - 1)];
      d.add(k, ring.negate(p));
    } else {
      Tuple k;
      for (std::size_t c = 0; c < current.schema().size(); ++c) k.push_back(uniform(rng, 0, domain - 1));
      d.add(k, random_payload(rng, ring));
    }
  }
  return d;
}

}  // namespace fivm::testing
