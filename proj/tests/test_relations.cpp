#include <gtest/gtest.h>

#include <map>
#include <set>

#include "fivm/relops.hpp"
#include "support.hpp"

using namespace fivm;
using fivm::testing::Rng;
using fivm::testing::uniform;

namespace {

constexpr VarId A = 0, B = 1, C = 2;
// a_i, b_i, c_i are encoded as the integer i
const IntegerRing Z;

Relation<IntegerRing> rel(std::vector<VarId> schema, std::vector<std::pair<Tuple, std::int64_t>> rows) {
  Relation<IntegerRing> r(Z, std::move(schema));
  for (auto& [k, v] : rows) r.add(k, v);
  return r;
}

// r1=2, r2=3, s1=5, s2=7, t1=11, t2=13
Relation<IntegerRing> R() { return rel({A, B}, {{{1, 1}, 2}, {{2, 1}, 3}}); }
Relation<IntegerRing> S() { return rel({A, B}, {{{2, 1}, 5}, {{3, 2}, 7}}); }
Relation<IntegerRing> T() { return rel({B, C}, {{{1, 1}, 11}, {{2, 2}, 13}}); }

std::int64_t at(const Relation<IntegerRing>& r, const Tuple& k) {
  const auto* p = r.find(k);
  return p ? *p : 0;
}

}  // namespace

TEST(Relations, UnionOfOperatorExample) {
  auto u = rel_union(R(), S());
  EXPECT_EQ(u.size(), 3u);
  EXPECT_EQ(at(u, {1, 1}), 2);
  EXPECT_EQ(at(u, {2, 1}), 3 + 5);
  EXPECT_EQ(at(u, {3, 2}), 7);
}

TEST(Relations, UnionWithEmptyAndCancellation) {
  Relation<IntegerRing> empty(Z, {A, B});
  EXPECT_TRUE(same_content(rel_union(R(), empty), R()));
  auto plus = rel({A}, {{{4}, 1}});
  auto minus = rel({A}, {{{4}, -1}});
  EXPECT_TRUE(rel_union(plus, minus).empty());
  EXPECT_THROW(rel_union(R(), T()), Error);
}

TEST(Relations, JoinOfOperatorExample) {
  auto j = rel_join(rel_union(R(), S()), T());
  EXPECT_EQ(j.schema(), (std::vector<VarId>{A, B, C}));
  EXPECT_EQ(j.size(), 3u);
  EXPECT_EQ(at(j, {1, 1, 1}), 2 * 11);
  EXPECT_EQ(at(j, {2, 1, 1}), (3 + 5) * 11);
  EXPECT_EQ(at(j, {3, 2, 2}), 7 * 13);
}

TEST(Relations, JoinWithIdentityAndDisjointJoin) {
  Relation<IntegerRing> unit(Z, {});
  unit.add({}, 1);
  EXPECT_TRUE(same_content(rel_join(T(), unit), T()));
  auto j = rel_join(rel({A}, {{{1}, 2}}), rel({B}, {{{1}, 3}}));
  EXPECT_EQ(j.size(), 1u);
  EXPECT_EQ(at(j, {1, 1}), 6);
}

TEST(Relations, MarginalizeOfOperatorExample) {
  LiftingFunction g{A, LiftMode::Identity};  // g_A(a_i) = i
  auto m = rel_marginalize(rel_join(rel_union(R(), S()), T()), A, g);
  EXPECT_EQ(m.schema(), (std::vector<VarId>{B, C}));
  EXPECT_EQ(at(m, {1, 1}), 2 * 11 * 1 + (3 + 5) * 11 * 2);
  EXPECT_EQ(at(m, {2, 2}), 7 * 13 * 3);
  EXPECT_THROW(rel_marginalize(T(), A, g), Error);
}

TEST(Relations, MarginalizeCountsGroups) {
  auto r = rel({A, B}, {{{1, 1}, 1}, {{1, 2}, 1}, {{1, 3}, 1}, {{2, 1}, 1}});
  auto m = rel_marginalize(r, B, LiftingFunction{B, LiftMode::ToOne});
  EXPECT_EQ(at(m, {1}), 3);
  EXPECT_EQ(at(m, {2}), 1);
  auto single = rel({A}, {{{1}, 4}, {{2}, 5}});
  auto all = rel_marginalize(single, A, LiftingFunction{A, LiftMode::ToOne});
  EXPECT_EQ(all.arity(), 0u);
  EXPECT_EQ(at(all, {}), 9);
}

TEST(Relations, IndicatorProjectionCounts) {
  auto r = rel({A, B}, {{{1, 1}, 4}, {{1, 2}, 5}, {{2, 3}, 6}});
  auto [ind, st] = indicator_project(r, {A});
  EXPECT_EQ(ind.size(), 2u);
  EXPECT_EQ(at(ind, {1}), 1);
  EXPECT_EQ(at(ind, {2}), 1);
  EXPECT_EQ(st.counts.at({1}), 2);
  EXPECT_EQ(st.counts.at({2}), 1);

  auto d1 = indicator_delta(st, {{{1}, -1}}, Z);
  EXPECT_TRUE(d1.empty());
  EXPECT_EQ(st.counts.at({1}), 1);
  auto d2 = indicator_delta(st, {{{1}, -1}}, Z);
  EXPECT_EQ(d2.size(), 1u);
  EXPECT_EQ(at(d2, {1}), -1);
  auto d3 = indicator_delta(st, {{{3}, +1}}, Z);
  EXPECT_EQ(at(d3, {3}), 1);
  EXPECT_THROW(indicator_delta(st, {{{9}, -1}}, Z), Error);
}

TEST(Relations, IndicatorEdgeCases) {
  auto r = rel({A, B}, {{{1, 1}, 4}, {{1, 2}, 5}});
  auto [full, st] = indicator_project(r, {A, B});
  EXPECT_EQ(full.size(), 2u);
  EXPECT_EQ(at(full, {1, 2}), 1);
  Relation<IntegerRing> empty(Z, {A, B});
  EXPECT_TRUE(indicator_project(empty, {A}).first.empty());
  EXPECT_THROW(indicator_project(r, {}), Error);
}

TEST(Relations, PrefixEnumerate) {
  auto r = rel({A, B}, {{{1, 1}, 2}, {{2, 1}, 3}, {{1, 2}, 4}});
  r.add_index({A});
  std::vector<Tuple> got;
  prefix_enumerate(r, {A}, {1}, [&](const Tuple& k, const std::int64_t&) { got.push_back(k); });
  EXPECT_EQ(got, (std::vector<Tuple>{{1, 1}, {1, 2}}));
  got.clear();
  prefix_enumerate(r, {A}, {7}, [&](const Tuple& k, const std::int64_t&) { got.push_back(k); });
  EXPECT_TRUE(got.empty());
  prefix_enumerate(r, {A, B}, {2, 1}, [&](const Tuple& k, const std::int64_t&) { got.push_back(k); });
  EXPECT_EQ(got, (std::vector<Tuple>{{2, 1}}));
  EXPECT_THROW(prefix_enumerate(r, {B}, {1}, [](const Tuple&, const std::int64_t&) {}), Error);
}

TEST(Relations, CountersTrackWork) {
  OpCounters ctr;
  Relation<IntegerRing> r(Z, {A, B}, &ctr);
  r.add({1, 1}, 1);
  r.add({1, 2}, 1);
  EXPECT_EQ(ctr.writes, 2u);
  EXPECT_EQ(ctr.probes, 2u);
  int ix = r.add_index({A});
  ctr.reset();
  std::size_t n = 0;
  r.for_each_match(ix, {1}, [&](const Tuple&, const std::int64_t&) { ++n; });
  EXPECT_EQ(n, 2u);
  EXPECT_EQ(ctr.probes, 1u);
  EXPECT_EQ(ctr.reads, 2u);
}

TEST(Relations, IterationIsInsertionOrdered) {
  Relation<IntegerRing> r(Z, {A});
  for (Value v : {5, 3, 9, 1}) r.add({v}, 1);
  r.add({3}, -1);
  r.add({3}, 1);
  std::vector<Value> order;
  for (auto [k, v] : r) order.push_back(k[0]);
  EXPECT_EQ(order, (std::vector<Value>{5, 9, 1, 3}));
}

TEST(Relations, IndicesMatchRebuildAfterRandomMutations) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    Relation<IntegerRing> r(Z, {A, B, C});
    r.add_index({A});
    r.add_index({B, C});
    r.add_index({A, C});
    r.add_distinct_index({A}, {A, B});
    r.add_distinct_index({}, {C});
    std::map<Tuple, std::int64_t> shadow;
    for (int step = 0; step < 400; ++step) {
      Tuple k{uniform(rng, 0, 4), uniform(rng, 0, 4), uniform(rng, 0, 3)};
      int d = uniform(rng, -2, 2);
      r.add(k, d);
      shadow[k] += d;
      if (shadow[k] == 0) shadow.erase(k);
      if (step % 50 == 0) ASSERT_TRUE(r.check_indices());
    }
    ASSERT_TRUE(r.check_indices());
    ASSERT_EQ(r.size(), shadow.size());
    for (const auto& [k, v] : shadow) ASSERT_EQ(at(r, k), v);
    // distinct index content
    int dx = r.find_distinct_index({A}, {A, B});
    for (Value a = 0; a <= 4; ++a) {
      std::set<Value> expect;
      for (const auto& [k, v] : shadow)
        if (k[0] == a) expect.insert(k[1]);
      std::set<Value> got;
      for (auto cur = r.distinct(dx, {a}); cur.valid(); cur.next()) got.insert(cur.item()[1]);
      ASSERT_EQ(got, expect);
    }
    // rebuilding indices from scratch gives the same buckets
    Relation<IntegerRing> copy = r;
    copy.clear();
    for (auto [k, v] : r) copy.add(k, v);
    ASSERT_TRUE(copy.check_indices());
    ASSERT_TRUE(same_content(copy, r));
  }
}

TEST(Relations, JoinDistributesOverUnion) {
  Rng rng(11);
  auto random_rel = [&](std::vector<VarId> schema) {
    Relation<IntegerRing> r(Z, schema);
    for (int i = 0; i < 15; ++i) {
      Tuple k;
      for (std::size_t j = 0; j < schema.size(); ++j) k.push_back(uniform(rng, 0, 3));
      r.add(k, uniform(rng, -3, 3));
    }
    return r;
  };
  for (int trial = 0; trial < 50; ++trial) {
    auto r1 = random_rel({A, B}), r2 = random_rel({A, B}), t = random_rel({B, C});
    ASSERT_TRUE(same_content(rel_union(r1, r2), rel_union(r2, r1)));
    ASSERT_TRUE(same_content(rel_join(rel_union(r1, r2), t), rel_union(rel_join(r1, t), rel_join(r2, t))));
    // pushing a marginalization past a join that does not mention the variable
    auto v1 = random_rel({A});
    LiftingFunction g{C, LiftMode::Identity};
    ASSERT_TRUE(same_content(rel_marginalize(rel_join(v1, t), C, g), rel_join(v1, rel_marginalize(t, C, g))));
  }
}
