#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fivm/enumeration.hpp"
#include "fivm/ivm.hpp"
#include "fivm/query.hpp"

namespace fivm {

// ---------------------------------------------------------------------------
// Covariance aggregates

enum class FeatureKind { Continuous, Categorical };

struct Feature {
  std::string var;
  FeatureKind kind = FeatureKind::Continuous;
};

/// A covariance query: every variable bound, one slot per feature in the
/// order the features were declared. Untagged variables lift to 1.
struct CovarianceQuery {
  Query query;
  std::vector<std::string> slot_names;
  std::vector<VarId> slot_vars;
  std::vector<FeatureKind> slot_kinds;
  bool generalized = false;  // relational base ring (some feature is categorical)

  int degree() const { return static_cast<int>(slot_names.size()); }
  int slot_of(const std::string& name) const;
};

/// `value_kinds` optionally fixes how key values decode (default Int,
/// categorical features default to Categorical).
CovarianceQuery build_covariance_query(const std::vector<std::pair<std::string, std::vector<std::string>>>& rels,
                                       const std::vector<Feature>& features,
                                       const std::vector<std::pair<std::string, ValueKind>>& value_kinds = {});

using ContinuousCovariance = CovarianceTriple<double>;
using GeneralCovariance = CovarianceTriple<RelationalPayload<double>>;

/// Root payload of an all-bound query (zero when the result is empty).
template <class R>
typename R::Payload root_payload(const Runtime<R>& rt) {
  auto res = rt.result();
  if (auto p = res.find(Tuple{})) return *p;
  return rt.base_ring().zero();
}

/// Dense (m+1)x(m+1) matrix of a continuous triple; row/column 0 is the
/// constant 1 (count and sums), slot i sits at i+1.
std::vector<std::vector<double>> covariance_matrix(const ContinuousCovariance& cov, int m);

// ---------------------------------------------------------------------------
// Linear regression by batch gradient descent

struct RegressionConfig {
  int label = -1;              // slot
  std::vector<int> features;   // slots
  double step = 0.1;           // fixed step size
  double threshold = 1e-10;    // stop once the gradient norm falls below
  int max_iterations = 100000;
  bool warm_start = false;
  bool intercept = true;       // synthesize a constant parameter from c and s
  int intercept_slot = -1;     // or use a slot whose variable lifts to a constant
};

/// Parameters ordered [intercept (if any), features..., label]; the label's is -1.
struct RegressionResult {
  std::vector<double> theta;
  int iterations = 0;
  double gradient_norm = 0;
  bool converged = false;
  bool diverged = false;
  std::string diagnostics;
};

/// Restricted matrix (normalized by the count) over [1?, features, label].
std::vector<std::vector<double>> regression_matrix(const ContinuousCovariance& cov, const RegressionConfig& cfg);
/// 1 / trace of the restricted feature block; never exceeds 2 / largest eigenvalue.
double safe_step_size(const ContinuousCovariance& cov, const RegressionConfig& cfg);

/// `previous` seeds the parameters when cfg.warm_start is set.
RegressionResult train_linear_regression(const ContinuousCovariance& cov, const RegressionConfig& cfg,
                                         const std::vector<double>* previous = nullptr);

// ---------------------------------------------------------------------------
// Mutual information and Chow-Liu trees

struct MIMatrix {
  int m = 0;
  std::vector<double> v;  // row-major, symmetric; diagonal left at 0
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * m + j]; }
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * m + j]; }
};

/// Pairwise MI in nats from group-by counts over categorical slots.
MIMatrix mutual_information_matrix(const GeneralCovariance& cov, const std::vector<VarId>& slot_vars);

/// Equal-width bucket of x in [lo, hi]; values outside clamp to the end buckets.
Value discretize(double x, double lo, double hi, int bins = 100);

struct ChowLiuEdge {
  int a = 0, b = 0;  // a < b
  double weight = 0;
  bool operator==(const ChowLiuEdge& o) const { return a == o.a && b == o.b; }
};

/// Prim-style maximum spanning tree grown from node 0; ties go to the
/// lexicographically smallest (a, b) pair.
std::vector<ChowLiuEdge> chow_liu_tree(const MIMatrix& mi);
double tree_weight(const std::vector<ChowLiuEdge>& edges);

// ---------------------------------------------------------------------------
// Matrix chains

struct MatrixChain {
  Query query;               // A_i(X_i, X_{i+1}), free {X_1, X_{n+1}}, real payloads
  Forest order;
  std::string bracketing;    // e.g. "((A1A2)A3)"
  long long cost = 0;        // scalar multiplications of the dense product
};

/// Order from the cheapest parenthesization; among equal costs the most
/// balanced split wins, then the leftmost.
MatrixChain build_matrix_chain(const std::vector<long long>& dims);

/// Applies u v^T to matrix `i` (0-based) as a factorized delta.
void mcm_rank_update(Runtime<RealRing>& rt, const Query& q, int i, const Relation<RealRing>& u,
                     const Relation<RealRing>& v);
/// Rank-r update as r sequential rank-1 updates.
void mcm_rank_update(Runtime<RealRing>& rt, const Query& q, int i, const std::vector<Relation<RealRing>>& us,
                     const std::vector<Relation<RealRing>>& vs);

// ---------------------------------------------------------------------------
// CSV exports

void write_covariance_csv(std::ostream& os, const ContinuousCovariance& cov, const std::vector<std::string>& names);
/// Long format: row, row_value, col, col_value, value; "" marks a constant side.
void write_covariance_csv(std::ostream& os, const GeneralCovariance& cov, const CovarianceQuery& cq);
void write_mi_csv(std::ostream& os, const MIMatrix& mi, const std::vector<std::string>& names);
void write_theta_csv(std::ostream& os, const RegressionResult& r, const RegressionConfig& cfg,
                     const std::vector<std::string>& names);
void write_chow_liu_csv(std::ostream& os, const std::vector<ChowLiuEdge>& edges, const std::vector<std::string>& names);

}  // namespace fivm
