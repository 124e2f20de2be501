#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fivm/rings.hpp"
#include "support.hpp"

using namespace fivm;
using fivm::testing::Rng;

namespace {

ContinuousCovarianceRing cov2() { return ContinuousCovarianceRing(RingSpec::covariance(2)); }

ContinuousCovarianceRing::Payload triple(double c, std::vector<std::pair<int, double>> s,
                                         std::vector<std::pair<std::pair<int, int>, double>> q) {
  return {c, std::move(s), std::move(q)};
}

}  // namespace

TEST(IntegerRing, AdditiveInverseCancels) {
  IntegerRing z;
  EXPECT_TRUE(z.is_zero(z.add(3, -3)));
  EXPECT_EQ(z.negate(5), -5);
  EXPECT_TRUE(z.is_zero(0));
}

TEST(RealRing, ToleranceZeroTest) {
  RealRing r(RingSpec::real(1e-9));
  EXPECT_TRUE(r.is_zero(1e-12));
  EXPECT_FALSE(r.is_zero(1e-6));
  RealRing exact;
  EXPECT_FALSE(exact.is_zero(1e-300));
}

TEST(CovarianceRing, ComponentwiseAddition) {
  auto ring = cov2();
  auto a = triple(1, {{0, 2}}, {{{0, 0}, 4}});
  auto b = triple(1, {{1, 3}}, {{{1, 1}, 9}});
  auto sum = ring.add(a, b);
  EXPECT_EQ(sum, triple(2, {{0, 2}, {1, 3}}, {{{0, 0}, 4}, {{1, 1}, 9}}));
}

TEST(CovarianceRing, IdentityIsNeutral) {
  auto ring = cov2();
  auto a = triple(3, {{0, 2}, {1, -1}}, {{{0, 1}, 4}});
  EXPECT_EQ(ring.mul(a, ring.one()), a);
  EXPECT_EQ(ring.mul(ring.one(), a), a);
}

TEST(CovarianceRing, LiftProductGivesCrossTerm) {
  // x = 3, y = 5: (1,[x,0],[[x^2,0],[0,0]]) * (1,[0,y],[[0,0],[0,y^2]])
  auto ring = cov2();
  LiftingFunction fx{0, LiftMode::CovarianceContinuous, 0, ValueKind::Int};
  LiftingFunction fy{1, LiftMode::CovarianceContinuous, 1, ValueKind::Int};
  auto prod = ring.mul(ring.lift(fx, 3), ring.lift(fy, 5));
  EXPECT_EQ(prod, triple(1, {{0, 3}, {1, 5}}, {{{0, 0}, 9}, {{0, 1}, 15}, {{1, 1}, 25}}));
  EXPECT_EQ(*prod.q_at(1, 0), 15);
}

TEST(CovarianceRing, NegateCancels) {
  auto ring = cov2();
  auto a = triple(2, {{0, 1}}, {{{0, 0}, 1}, {{0, 1}, 7}});
  EXPECT_TRUE(ring.is_zero(ring.add(a, ring.negate(a))));
  EXPECT_TRUE(ring.is_zero(ring.zero()));
}

TEST(CovarianceRing, DimensionMismatchRejected) {
  auto ring = cov2();
  auto bad = triple(1, {{2, 1}}, {});
  EXPECT_THROW(ring.add(bad, ring.one()), Error);
  LiftingFunction f{0, LiftMode::CovarianceContinuous, 5, ValueKind::Int};
  EXPECT_THROW(ring.lift(f, 1), Error);
}

TEST(CovarianceRing, ContinuousLiftFourthSlot) {
  ContinuousCovarianceRing ring(RingSpec::covariance(5));
  LiftingFunction f{3, LiftMode::CovarianceContinuous, 3, ValueKind::Int};
  auto p = ring.lift(f, 6);
  EXPECT_EQ(p, (ContinuousCovarianceRing::Payload{1, {{3, 6.0}}, {{{3, 3}, 36.0}}}));
}

TEST(CovarianceRing, CategoricalLiftNeedsRelationalBase) {
  LiftingFunction f{2, LiftMode::CovarianceCategorical, 0, ValueKind::Categorical};
  EXPECT_THROW(cov2().lift(f, 1), Error);
  GeneralCovarianceRing g(RingSpec::covariance(2, BaseKind::Relational));
  auto p = g.lift(f, 7);
  ASSERT_EQ(p.s.size(), 1u);
  EXPECT_EQ(p.s[0].second, g.base().singleton(2, 7));
  EXPECT_EQ(p.q[0].second, g.base().singleton(2, 7));
  EXPECT_TRUE(g.base().is_one(p.c));
}

TEST(CovarianceRing, ContinuousLiftRejectsCategoricalValues) {
  LiftingFunction f{0, LiftMode::CovarianceContinuous, 0, ValueKind::Categorical};
  EXPECT_THROW(cov2().lift(f, 1), Error);
}

TEST(RelationalRing, ZeroPrunedUnion) {
  RelationalIntRing r;
  auto a = r.singleton(0, 1, 2);
  auto b = r.add(r.singleton(0, 1, -2), r.singleton(0, 2, 1));
  EXPECT_EQ(r.add(a, b), r.singleton(0, 2, 1));
}

TEST(RelationalRing, JoinWithScalarPayload) {
  RelationalIntRing r;
  auto bs = r.add(r.singleton(1, 1), r.singleton(1, 2));
  auto prod = r.mul(bs, r.scalar(2));
  EXPECT_EQ(prod, r.add(r.singleton(1, 1, 2), r.singleton(1, 2, 2)));
}

TEST(RelationalRing, JoinMatchesOnSharedAttributes) {
  RelationalIntRing r;
  // {(A=1,B=1)->1, (A=2,B=1)->2} join {(A=1,C=5)->3}
  RelationalIntRing::Payload left;
  left.entries = {{{{0, 1}, {1, 1}}, 1}, {{{0, 2}, {1, 1}}, 2}};
  RelationalIntRing::Payload right;
  right.entries = {{{{0, 1}, {2, 5}}, 3}};
  auto j = r.mul(left, right);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j.entries[0].first, (GTuple{{0, 1}, {1, 1}, {2, 5}}));
  EXPECT_EQ(j.entries[0].second, 3);
}

TEST(RelationalRing, Lifts) {
  RelationalIntRing r;
  LiftingFunction single{4, LiftMode::RelationalSingleton, 0, ValueKind::Categorical};
  EXPECT_EQ(r.lift(single, 9), r.singleton(4, 9));
  LiftingFunction unit{4, LiftMode::RelationalUnit, 0, ValueKind::Categorical};
  EXPECT_TRUE(r.is_one(r.lift(unit, 9)));
  EXPECT_TRUE(r.is_one(r.lift(LiftingFunction{4, LiftMode::ToOne}, 9)));
  EXPECT_EQ(r.negate(r.singleton(0, 1, 3)), r.singleton(0, 1, -3));
}

TEST(Lifts, ToOneAndIdentity) {
  IntegerRing z;
  RealRing re;
  EXPECT_EQ(z.lift(LiftingFunction{0, LiftMode::ToOne}, 42), 1);
  EXPECT_EQ(z.lift(LiftingFunction{0, LiftMode::Identity}, 42), 42);
  EXPECT_DOUBLE_EQ(re.lift(LiftingFunction{0, LiftMode::Identity, 0, ValueKind::Real}, encode_real(2.5)), 2.5);
  EXPECT_THROW(z.lift(LiftingFunction{0, LiftMode::RelationalSingleton}, 1), Error);
}

TEST(RingSpec, Validation) {
  EXPECT_THROW(RingSpec::covariance(0).validate(), Error);
  EXPECT_THROW((RingSpec{RingKind::Integer, 0, BaseKind::Real, 0.1}).validate(), Error);
  EXPECT_NO_THROW(RingSpec::relational(BaseKind::Real, 1e-9).validate());
}

// ---------------------------------------------------------------------------
// Ring axioms on random payloads

template <class R>
class RingAxioms : public ::testing::Test {
 public:
  static R make();
};
template <>
IntegerRing RingAxioms<IntegerRing>::make() { return IntegerRing(); }
template <>
RealRing RingAxioms<RealRing>::make() { return RealRing(); }
template <>
ContinuousCovarianceRing RingAxioms<ContinuousCovarianceRing>::make() {
  return ContinuousCovarianceRing(RingSpec::covariance(4));
}
template <>
GeneralCovarianceRing RingAxioms<GeneralCovarianceRing>::make() {
  return GeneralCovarianceRing(RingSpec::covariance(3, BaseKind::Relational));
}
template <>
RelationalIntRing RingAxioms<RelationalIntRing>::make() { return RelationalIntRing(); }
template <>
RelationalRealRing RingAxioms<RelationalRealRing>::make() {
  return RelationalRealRing(RingSpec::relational(BaseKind::Real));
}

using AllRings = ::testing::Types<IntegerRing, RealRing, ContinuousCovarianceRing, GeneralCovarianceRing,
                                  RelationalIntRing, RelationalRealRing>;
TYPED_TEST_SUITE(RingAxioms, AllRings);

TYPED_TEST(RingAxioms, HoldOnRandomPayloads) {
  auto ring = TestFixture::make();
  Rng rng(1234);
  auto eq = [&](const auto& x, const auto& y) { return ring.approx_equal(x, y, 1e-12); };
  for (int trial = 0; trial < 300; ++trial) {
    auto a = fivm::testing::random_payload(rng, ring);
    auto b = fivm::testing::random_payload(rng, ring);
    auto c = fivm::testing::random_payload(rng, ring);
    ASSERT_TRUE(eq(ring.add(ring.add(a, b), c), ring.add(a, ring.add(b, c)))) << "add assoc";
    ASSERT_TRUE(eq(ring.add(a, b), ring.add(b, a))) << "add comm";
    ASSERT_TRUE(eq(ring.mul(ring.mul(a, b), c), ring.mul(a, ring.mul(b, c)))) << "mul assoc";
    ASSERT_TRUE(eq(ring.mul(a, b), ring.mul(b, a))) << "mul comm";
    ASSERT_TRUE(eq(ring.mul(a, ring.add(b, c)), ring.add(ring.mul(a, b), ring.mul(a, c)))) << "distributivity";
    ASSERT_TRUE(eq(ring.add(a, ring.zero()), a));
    ASSERT_TRUE(eq(ring.mul(a, ring.one()), a));
    ASSERT_TRUE(ring.is_zero(ring.add(a, ring.negate(a))));
    ASSERT_TRUE(ring.is_zero(ring.mul(a, ring.zero())));
  }
}

TEST(CovarianceRing, FoldOfLiftsMatchesScan) {
  // COUNT, SUM(x_i), SUM(x_i * x_j) of a random table via lift, mul, add.
  const int m = 4;
  ContinuousCovarianceRing ring(RingSpec::covariance(m));
  Rng rng(99);
  std::vector<std::vector<int>> rows(50, std::vector<int>(m));
  for (auto& r : rows)
    for (auto& x : r) x = fivm::testing::uniform(rng, -6, 6);
  auto acc = ring.zero();
  for (const auto& r : rows) {
    auto p = ring.one();
    for (int j = 0; j < m; ++j) p = ring.mul(p, ring.lift(LiftingFunction{j, LiftMode::CovarianceContinuous, j}, r[j]));
    acc = ring.add(acc, p);
  }
  EXPECT_EQ(acc.c, 50.0);
  for (int i = 0; i < m; ++i) {
    double s = 0;
    for (const auto& r : rows) s += r[i];
    const double* got = acc.s_at(i);
    EXPECT_EQ(got ? *got : 0.0, s);
    for (int j = 0; j < m; ++j) {
      double q = 0;
      for (const auto& r : rows) q += r[i] * r[j];
      const double* gq = acc.q_at(i, j);
      EXPECT_EQ(gq ? *gq : 0.0, q) << i << "," << j;
    }
  }
}
