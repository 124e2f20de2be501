#include "fivm/rings.hpp"

namespace fivm {

std::string RingSpec::describe() const {
  switch (kind) {
    case RingKind::Integer: return "integer";
    case RingKind::Real: return "real(tol=" + fmt_double(zero_tolerance) + ")";
    case RingKind::Covariance:
      return "covariance(m=" + std::to_string(degree) + ", base=" + (base == BaseKind::Real ? "real" : "relational") + ")";
    case RingKind::Relational: return std::string("relational(base=") + (base == BaseKind::Integer ? "integer" : "real") + ")";
  }
  return "?";
}

std::string to_string(LiftMode m) {
  switch (m) {
    case LiftMode::ToOne: return "one";
    case LiftMode::Identity: return "identity";
    case LiftMode::CovarianceContinuous: return "continuous";
    case LiftMode::CovarianceCategorical: return "categorical";
    case LiftMode::RelationalSingleton: return "singleton";
    case LiftMode::RelationalUnit: return "unit";
  }
  return "?";
}

LiftMode lift_mode_from_string(const std::string& s) {
  for (LiftMode m : {LiftMode::ToOne, LiftMode::Identity, LiftMode::CovarianceContinuous, LiftMode::CovarianceCategorical,
                     LiftMode::RelationalSingleton, LiftMode::RelationalUnit})
    if (to_string(m) == s) return m;
  throw Error("unknown lifting mode '" + s + "'");
}

}  // namespace fivm
