#pragma once

// Small worked instances shared by unit tests and the acceptance binary.

#include "fivm/relation.hpp"
#include "fivm/query.hpp"

namespace fivm::fixtures {

inline Forest node(const std::string& v, Forest kids = {}) { return {ForestNode{v, std::move(kids)}}; }
inline Forest join(Forest a, const Forest& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// R(A,B), S(A,C,E), T(C,D) with the order A(B, C(D, E)).
inline Query rst(const std::vector<std::string>& free = {}, RingSpec ring = RingSpec::integer()) {
  return Query::make({{"R", {"A", "B"}}, {"S", {"A", "C", "E"}}, {"T", {"C", "D"}}}, free, ring);
}
inline Forest rst_order() { return node("A", join(node("B"), node("C", join(node("D"), node("E"))))); }

/// The 12-tuple database over R, S, T; value x_i is encoded as i and tuple
/// number k (1-based, R first, then S, then T) gets payload pay(k).
template <class R, class P>
std::vector<Relation<R>> count_database(const Query& q, const R& ring, P&& pay) {
  const std::vector<std::vector<Tuple>> rows = {
      {{1, 1}, {1, 2}, {2, 3}, {3, 4}},
      {{1, 1, 1}, {1, 1, 2}, {1, 2, 3}, {2, 2, 4}},
      {{1, 1}, {2, 2}, {2, 3}, {3, 4}},
  };
  std::vector<Relation<R>> db;
  int k = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    Relation<R> r(ring, q.relations[i].schema);
    for (const auto& t : rows[i]) r.add(t, pay(++k));
    db.push_back(std::move(r));
  }
  return db;
}

}  // namespace fivm::fixtures
