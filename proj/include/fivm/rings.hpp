#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fivm/common.hpp"

namespace fivm {

enum class RingKind { Integer, Real, Covariance, Relational };
enum class BaseKind { Integer, Real, Relational };

struct RingSpec {
  RingKind kind = RingKind::Integer;
  int degree = 0;                  // covariance only
  BaseKind base = BaseKind::Real;  // covariance: Real|Relational, relational: Integer|Real
  double zero_tolerance = 0.0;

  static RingSpec integer() { return {}; }
  static RingSpec real(double tol = 0.0) { return {RingKind::Real, 0, BaseKind::Real, tol}; }
  static RingSpec covariance(int m, BaseKind base = BaseKind::Real, double tol = 0.0) {
    return {RingKind::Covariance, m, base, tol};
  }
  static RingSpec relational(BaseKind base = BaseKind::Integer, double tol = 0.0) {
    return {RingKind::Relational, 0, base, tol};
  }

  void validate() const {
    if (zero_tolerance < 0) throw Error("zero tolerance must be non-negative");
    switch (kind) {
      case RingKind::Integer:
        if (zero_tolerance != 0) throw Error("integer ring is exact; tolerance must be 0");
        break;
      case RingKind::Real: break;
      case RingKind::Covariance:
        if (degree < 1) throw Error("covariance degree must be >= 1");
        if (base == BaseKind::Integer) throw Error("covariance base must be real or relational");
        break;
      case RingKind::Relational:
        if (base == BaseKind::Relational) throw Error("relational payload base must be integer or real");
        if (base == BaseKind::Integer && zero_tolerance != 0) throw Error("integer base is exact");
        break;
    }
  }
  std::string describe() const;
  bool operator==(const RingSpec&) const = default;
};

enum class LiftMode {
  ToOne,
  Identity,
  CovarianceContinuous,
  CovarianceCategorical,
  RelationalSingleton,
  RelationalUnit
};

/// How a variable's values turn into payloads when it is aggregated away.
/// `slot` is the 0-based covariance position; `kind` tells how to decode x.
struct LiftingFunction {
  VarId target = -1;
  LiftMode mode = LiftMode::ToOne;
  int slot = 0;
  ValueKind kind = ValueKind::Int;
  bool operator==(const LiftingFunction&) const = default;
};

std::string to_string(LiftMode m);
LiftMode lift_mode_from_string(const std::string& s);

inline bool approx_scalar(double a, double b, double tol) {
  if (a == b) return true;
  double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) <= tol * scale;
}

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// Scalar rings

class IntegerRing {
 public:
  using Payload = std::int64_t;
  IntegerRing() = default;
  explicit IntegerRing(const RingSpec& spec) : spec_(spec) {}

  Payload zero() const { return 0; }
  Payload one() const { return 1; }
  Payload add(Payload a, Payload b) const { return a + b; }
  void add_to(Payload& a, const Payload& b) const { a += b; }
  Payload mul(Payload a, Payload b) const { return a * b; }
  Payload negate(Payload a) const { return -a; }
  bool is_zero(Payload a) const { return a == 0; }
  bool is_one(Payload a) const { return a == 1; }
  Payload from_double(double x) const { return static_cast<Payload>(std::llround(x)); }
  Payload lift(const LiftingFunction& f, Value x) const {
    switch (f.mode) {
      case LiftMode::ToOne: return 1;
      case LiftMode::Identity:
        if (f.kind == ValueKind::Int) return x;
        throw Error("identity lift into the integer ring needs an integer variable");
      default: throw Error("lifting mode " + fivm::to_string(f.mode) + " does not target the integer ring");
    }
  }
  bool approx_equal(Payload a, Payload b, double) const { return a == b; }
  std::string to_string(Payload a) const { return std::to_string(a); }
  const RingSpec& spec() const { return spec_; }

 private:
  RingSpec spec_ = RingSpec::integer();
};

class RealRing {
 public:
  using Payload = double;
  RealRing() = default;
  explicit RealRing(const RingSpec& spec) : spec_(spec), tol_(spec.zero_tolerance) {}

  Payload zero() const { return 0.0; }
  Payload one() const { return 1.0; }
  Payload add(Payload a, Payload b) const { return a + b; }
  void add_to(Payload& a, const Payload& b) const { a += b; }
  Payload mul(Payload a, Payload b) const { return a * b; }
  Payload negate(Payload a) const { return -a; }
  bool is_zero(Payload a) const { return std::fabs(a) <= tol_; }
  bool is_one(Payload a) const { return a == 1.0; }
  Payload from_double(double x) const { return x; }
  Payload lift(const LiftingFunction& f, Value x) const {
    switch (f.mode) {
      case LiftMode::ToOne: return 1.0;
      case LiftMode::Identity: return numeric_value(x, f.kind);
      default: throw Error("lifting mode " + fivm::to_string(f.mode) + " does not target the real ring");
    }
  }
  bool approx_equal(Payload a, Payload b, double tol) const { return approx_scalar(a, b, tol); }
  std::string to_string(Payload a) const { return fmt_double(a); }
  const RingSpec& spec() const { return spec_; }
  double tolerance() const { return tol_; }

 private:
  RingSpec spec_ = RingSpec::real();
  double tol_ = 0.0;
};

// ---------------------------------------------------------------------------
// Relational payloads

/// A tuple that names its own attributes: (variable, value) pairs sorted by
/// variable. Letting every entry carry its schema makes union and join total.
using GTuple = std::vector<std::pair<VarId, Value>>;

template <class S>
struct RelationalPayload {
  std::vector<std::pair<GTuple, S>> entries;  // sorted by key, scalars non-zero

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  const S* find(const GTuple& k) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), k,
                               [](const auto& e, const GTuple& key) { return e.first < key; });
    if (it != entries.end() && it->first == k) return &it->second;
    return nullptr;
  }
  bool operator==(const RelationalPayload&) const = default;
};

inline bool gtuples_compatible(const GTuple& a, const GTuple& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) ++i;
    else if (b[j].first < a[i].first) ++j;
    else {
      if (a[i].second != b[j].second) return false;
      ++i, ++j;
    }
  }
  return true;
}

inline GTuple gtuple_merge(const GTuple& a, const GTuple& b) {
  GTuple r;
  r.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) r.push_back(a[i++]);
    else if (i == a.size() || b[j].first < a[i].first) r.push_back(b[j++]);
    else {
      r.push_back(a[i++]);
      ++j;
    }
  }
  return r;
}

template <class S>
class RelationalRing {
 public:
  using Scalar = S;
  using Payload = RelationalPayload<S>;

  RelationalRing()
      : spec_(RingSpec::relational(std::is_integral_v<S> ? BaseKind::Integer : BaseKind::Real)) {}
  explicit RelationalRing(const RingSpec& spec) : spec_(spec) {}

  Payload zero() const { return {}; }
  Payload one() const { return scalar(S(1)); }
  Payload scalar(S x) const {
    Payload p;
    if (x != S(0)) p.entries.push_back({GTuple{}, x});
    return p;
  }
  Payload singleton(VarId var, Value x, S mult = S(1)) const {
    Payload p;
    p.entries.push_back({GTuple{{var, x}}, mult});
    return p;
  }

  Payload add(const Payload& a, const Payload& b) const {
    if (a.empty()) return b;
    if (b.empty()) return a;
    Payload r;
    r.entries.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
      if (j == b.size() || (i < a.size() && a.entries[i].first < b.entries[j].first)) {
        r.entries.push_back(a.entries[i++]);
      } else if (i == a.size() || b.entries[j].first < a.entries[i].first) {
        r.entries.push_back(b.entries[j++]);
      } else {
        S s = a.entries[i].second + b.entries[j].second;
        if (s != S(0)) r.entries.push_back({a.entries[i].first, s});
        ++i, ++j;
      }
    }
    return r;
  }
  void add_to(Payload& a, const Payload& b) const { a = add(a, b); }

  Payload mul(const Payload& a, const Payload& b) const {
    if (a.empty() || b.empty()) return {};
    if (is_one(a)) return b;
    if (is_one(b)) return a;
    std::vector<std::pair<GTuple, S>> out;
    out.reserve(a.size() * b.size());
    for (const auto& [ka, sa] : a.entries) {
      for (const auto& [kb, sb] : b.entries) {
        if (!gtuples_compatible(ka, kb)) continue;
        out.push_back({gtuple_merge(ka, kb), sa * sb});
      }
    }
    return normalize(std::move(out));
  }

  Payload negate(const Payload& a) const {
    Payload r = a;
    for (auto& e : r.entries) e.second = -e.second;
    return r;
  }
  bool is_zero(const Payload& a) const { return a.empty(); }
  bool is_one(const Payload& a) const {
    return a.size() == 1 && a.entries[0].first.empty() && a.entries[0].second == S(1);
  }
  Payload from_double(double x) const {
    if constexpr (std::is_integral_v<S>) return scalar(static_cast<S>(std::llround(x)));
    else return scalar(x);
  }

  Payload lift(const LiftingFunction& f, Value x) const {
    switch (f.mode) {
      case LiftMode::ToOne:
      case LiftMode::RelationalUnit: return one();
      case LiftMode::RelationalSingleton: return singleton(f.target, x);
      case LiftMode::Identity:
        if constexpr (std::is_integral_v<S>) {
          if (f.kind != ValueKind::Int) throw Error("identity lift into integer payloads needs an integer variable");
          return scalar(static_cast<S>(x));
        } else {
          return scalar(numeric_value(x, f.kind));
        }
      default: throw Error("lifting mode " + fivm::to_string(f.mode) + " does not target relational payloads");
    }
  }

  /// Sorts, merges duplicate keys and drops zero scalars (exact zero test).
  static Payload normalize(std::vector<std::pair<GTuple, S>> v) {
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    Payload r;
    r.entries.reserve(v.size());
    for (auto& e : v) {
      if (!r.entries.empty() && r.entries.back().first == e.first) {
        r.entries.back().second += e.second;
        if (r.entries.back().second == S(0)) r.entries.pop_back();
      } else if (e.second != S(0)) {
        r.entries.push_back(std::move(e));
      }
    }
    return r;
  }

  /// Marginalizes the payload onto `vars` (entries lacking a variable keep
  /// only the attributes they have), summing scalars.
  Payload project(const Payload& a, const VarSet& vars) const {
    std::vector<std::pair<GTuple, S>> out;
    for (const auto& [k, s] : a.entries) {
      GTuple key;
      for (const auto& kv : k)
        if (vs_contains(vars, kv.first)) key.push_back(kv);
      out.push_back({std::move(key), s});
    }
    return normalize(std::move(out));
  }
  S total(const Payload& a) const {
    S t = S(0);
    for (const auto& e : a.entries) t += e.second;
    return t;
  }

  bool approx_equal(const Payload& a, const Payload& b, double tol) const {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.entries[i].first != b.entries[i].first) return false;
      if constexpr (std::is_integral_v<S>) {
        if (a.entries[i].second != b.entries[i].second) return false;
      } else if (!approx_scalar(a.entries[i].second, b.entries[i].second, tol)) {
        return false;
      }
    }
    return true;
  }

  std::string to_string(const Payload& a) const {
    std::string r = "{";
    bool first = true;
    for (const auto& [k, s] : a.entries) {
      if (!first) r += ", ";
      first = false;
      r += "(";
      for (std::size_t i = 0; i < k.size(); ++i) {
        if (i) r += ",";
        r += "v" + std::to_string(k[i].first) + "=" + std::to_string(k[i].second);
      }
      r += ")->";
      if constexpr (std::is_integral_v<S>) r += std::to_string(s);
      else r += fmt_double(s);
    }
    return r + "}";
  }
  const RingSpec& spec() const { return spec_; }

 private:
  RingSpec spec_;
};

// ---------------------------------------------------------------------------
// Covariance triples

/// (c, s, Q) with s and Q sparse; Q keeps only entries with i <= j.
template <class B>
struct CovarianceTriple {
  B c{};
  std::vector<std::pair<int, B>> s;
  std::vector<std::pair<std::pair<int, int>, B>> q;

  const B* s_at(int i) const {
    for (const auto& e : s)
      if (e.first == i) return &e.second;
    return nullptr;
  }
  const B* q_at(int i, int j) const {
    std::pair<int, int> k{std::min(i, j), std::max(i, j)};
    for (const auto& e : q)
      if (e.first == k) return &e.second;
    return nullptr;
  }
  bool operator==(const CovarianceTriple&) const = default;
};

template <class BaseRing>
class CovarianceRing {
 public:
  using Base = BaseRing;
  using B = typename BaseRing::Payload;
  using Payload = CovarianceTriple<B>;

  CovarianceRing(int degree, BaseRing base, RingSpec spec) : m_(degree), base_(std::move(base)), spec_(spec) {
    if (m_ < 1) throw Error("covariance degree must be >= 1");
  }
  explicit CovarianceRing(const RingSpec& spec) : CovarianceRing(spec.degree, make_base(spec), spec) {}

  int degree() const { return m_; }
  const BaseRing& base() const { return base_; }

  Payload zero() const { return Payload{base_.zero(), {}, {}}; }
  Payload one() const { return Payload{base_.one(), {}, {}}; }

  Payload add(const Payload& a, const Payload& b) const {
    check(a);
    check(b);
    Payload r;
    r.c = base_.add(a.c, b.c);
    r.s = merge(a.s, b.s);
    r.q = merge(a.q, b.q);
    return r;
  }
  void add_to(Payload& a, const Payload& b) const { a = add(a, b); }

  Payload mul(const Payload& a, const Payload& b) const {
    check(a);
    check(b);
    if (is_one(a)) return b;
    if (is_one(b)) return a;
    Payload r;
    r.c = base_.mul(a.c, b.c);
    r.s = merge(scale(a.s, b.c), scale(b.s, a.c));
    auto q = merge(scale(a.q, b.c), scale(b.q, a.c));
    if (!a.s.empty() && !b.s.empty()) {
      std::vector<std::pair<std::pair<int, int>, B>> cross;
      cross.reserve(a.s.size() * b.s.size());
      for (const auto& [i, x] : a.s) {
        for (const auto& [j, y] : b.s) {
          B xy = base_.mul(x, y);
          if (base_.is_zero(xy)) continue;
          if (i == j) xy = base_.add(xy, xy);
          cross.push_back({{std::min(i, j), std::max(i, j)}, std::move(xy)});
        }
      }
      q = merge(q, combine(std::move(cross)));
    }
    r.q = std::move(q);
    return r;
  }

  Payload negate(const Payload& a) const {
    Payload r;
    r.c = base_.negate(a.c);
    for (const auto& [i, x] : a.s) r.s.push_back({i, base_.negate(x)});
    for (const auto& [k, x] : a.q) r.q.push_back({k, base_.negate(x)});
    return r;
  }
  bool is_zero(const Payload& a) const { return base_.is_zero(a.c) && a.s.empty() && a.q.empty(); }
  bool is_one(const Payload& a) const { return a.s.empty() && a.q.empty() && base_.is_one(a.c); }
  Payload from_double(double x) const { return Payload{base_.from_double(x), {}, {}}; }

  Payload lift(const LiftingFunction& f, Value x) const {
    switch (f.mode) {
      case LiftMode::ToOne: return one();
      case LiftMode::CovarianceContinuous: {
        check_slot(f.slot);
        double v = numeric_value(x, f.kind);
        Payload r = one();
        B sv = base_.from_double(v);
        B qv = base_.from_double(v * v);
        if (!base_.is_zero(sv)) r.s.push_back({f.slot, sv});
        if (!base_.is_zero(qv)) r.q.push_back({{f.slot, f.slot}, qv});
        return r;
      }
      case LiftMode::CovarianceCategorical: {
        check_slot(f.slot);
        if constexpr (std::is_same_v<B, RelationalPayload<double>>) {
          Payload r = one();
          r.s.push_back({f.slot, base_.singleton(f.target, x)});
          r.q.push_back({{f.slot, f.slot}, base_.singleton(f.target, x)});
          return r;
        } else {
          throw Error("categorical lift needs the generalized (relational-base) covariance ring");
        }
      }
      default: throw Error("lifting mode " + fivm::to_string(f.mode) + " does not target the covariance ring");
    }
  }

  bool approx_equal(const Payload& a, const Payload& b, double tol) const {
    if (!base_.approx_equal(a.c, b.c, tol)) return false;
    if (a.s.size() != b.s.size() || a.q.size() != b.q.size()) return false;
    for (std::size_t i = 0; i < a.s.size(); ++i)
      if (a.s[i].first != b.s[i].first || !base_.approx_equal(a.s[i].second, b.s[i].second, tol)) return false;
    for (std::size_t i = 0; i < a.q.size(); ++i)
      if (a.q[i].first != b.q[i].first || !base_.approx_equal(a.q[i].second, b.q[i].second, tol)) return false;
    return true;
  }

  std::string to_string(const Payload& a) const {
    std::string r = "(c=" + base_.to_string(a.c) + "; s=[";
    for (std::size_t i = 0; i < a.s.size(); ++i)
      r += (i ? ", " : "") + std::to_string(a.s[i].first) + ":" + base_.to_string(a.s[i].second);
    r += "]; Q=[";
    for (std::size_t i = 0; i < a.q.size(); ++i)
      r += (i ? ", " : "") + std::to_string(a.q[i].first.first) + "," + std::to_string(a.q[i].first.second) + ":" +
           base_.to_string(a.q[i].second);
    return r + "])";
  }
  const RingSpec& spec() const { return spec_; }

 private:
  static BaseRing make_base(const RingSpec& spec) {
    if constexpr (std::is_same_v<BaseRing, RealRing>) return RealRing(RingSpec::real(spec.zero_tolerance));
    else return BaseRing(RingSpec::relational(BaseKind::Real, spec.zero_tolerance));
  }
  void check_slot(int slot) const {
    if (slot < 0 || slot >= m_) throw Error("covariance slot " + std::to_string(slot) + " outside degree " + std::to_string(m_));
  }
  void check(const Payload& a) const {
    if (!a.s.empty() && a.s.back().first >= m_) throw Error("covariance dimension mismatch");
    if (!a.q.empty() && a.q.back().first.second >= m_) {
      for (const auto& e : a.q)
        if (e.first.second >= m_) throw Error("covariance dimension mismatch");
    }
  }

  template <class K>
  std::vector<std::pair<K, B>> merge(const std::vector<std::pair<K, B>>& a, const std::vector<std::pair<K, B>>& b) const {
    if (a.empty()) return b;
    if (b.empty()) return a;
    std::vector<std::pair<K, B>> r;
    r.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
      if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) r.push_back(a[i++]);
      else if (i == a.size() || b[j].first < a[i].first) r.push_back(b[j++]);
      else {
        B x = base_.add(a[i].second, b[j].second);
        if (!base_.is_zero(x)) r.push_back({a[i].first, std::move(x)});
        ++i, ++j;
      }
    }
    return r;
  }
  template <class K>
  std::vector<std::pair<K, B>> scale(const std::vector<std::pair<K, B>>& v, const B& f) const {
    if (base_.is_one(f)) return v;
    std::vector<std::pair<K, B>> r;
    r.reserve(v.size());
    for (const auto& [k, x] : v) {
      B y = base_.mul(x, f);
      if (!base_.is_zero(y)) r.push_back({k, std::move(y)});
    }
    return r;
  }
  template <class K>
  std::vector<std::pair<K, B>> combine(std::vector<std::pair<K, B>> v) const {
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::vector<std::pair<K, B>> r;
    r.reserve(v.size());
    for (auto& e : v) {
      if (!r.empty() && r.back().first == e.first) {
        r.back().second = base_.add(r.back().second, e.second);
      } else {
        if (!r.empty() && base_.is_zero(r.back().second)) r.pop_back();
        r.push_back(std::move(e));
      }
    }
    if (!r.empty() && base_.is_zero(r.back().second)) r.pop_back();
    return r;
  }

  int m_;
  BaseRing base_;
  RingSpec spec_;
};

using RelationalIntRing = RelationalRing<std::int64_t>;
using RelationalRealRing = RelationalRing<double>;
using ContinuousCovarianceRing = CovarianceRing<RealRing>;
using GeneralCovarianceRing = CovarianceRing<RelationalRealRing>;

// ---------------------------------------------------------------------------
// Derivation counting

/// Pairs every payload with a count of supporting derivations. Views built on
/// top of it keep a key while any derivation exists, even if its aggregate
/// payload cancels to zero; enumeration relies on that. With tracking off the
/// count stays 0 and the ring behaves exactly like its base.
template <class R>
struct Counted {
  std::int64_t n = 0;
  typename R::Payload p{};
  bool operator==(const Counted&) const = default;
};

template <class R>
class CountedRing {
 public:
  using BaseRing = R;
  using Payload = Counted<R>;

  CountedRing(R base, bool track) : base_(std::move(base)), track_(track) {}

  const R& base() const { return base_; }
  bool tracking() const { return track_; }

  Payload zero() const { return {0, base_.zero()}; }
  Payload one() const { return {track_ ? 1 : 0, base_.one()}; }
  Payload wrap(typename R::Payload p, std::int64_t n) const { return {track_ ? n : 0, std::move(p)}; }
  Payload add(const Payload& a, const Payload& b) const { return {a.n + b.n, base_.add(a.p, b.p)}; }
  void add_to(Payload& a, const Payload& b) const {
    a.n += b.n;
    base_.add_to(a.p, b.p);
  }
  Payload mul(const Payload& a, const Payload& b) const { return {a.n * b.n, base_.mul(a.p, b.p)}; }
  Payload negate(const Payload& a) const { return {-a.n, base_.negate(a.p)}; }
  bool is_zero(const Payload& a) const { return a.n == 0 && base_.is_zero(a.p); }
  bool is_one(const Payload& a) const { return a.n == (track_ ? 1 : 0) && base_.is_one(a.p); }
  Payload lift(const LiftingFunction& f, Value x) const { return {track_ ? 1 : 0, base_.lift(f, x)}; }
  bool approx_equal(const Payload& a, const Payload& b, double tol) const {
    return a.n == b.n && base_.approx_equal(a.p, b.p, tol);
  }
  std::string to_string(const Payload& a) const {
    return track_ ? "[" + std::to_string(a.n) + "]" + base_.to_string(a.p) : base_.to_string(a.p);
  }
  const RingSpec& spec() const { return base_.spec(); }

 private:
  R base_;
  bool track_;
};

/// Calls `fn(ring)` with the concrete ring selected by `spec`.
template <class Fn>
decltype(auto) with_ring(const RingSpec& spec, Fn&& fn) {
  spec.validate();
  switch (spec.kind) {
    case RingKind::Integer: return fn(IntegerRing(spec));
    case RingKind::Real: return fn(RealRing(spec));
    case RingKind::Covariance:
      if (spec.base == BaseKind::Real) return fn(ContinuousCovarianceRing(spec));
      return fn(GeneralCovarianceRing(spec));
    case RingKind::Relational:
      if (spec.base == BaseKind::Integer) return fn(RelationalIntRing(spec));
      return fn(RelationalRealRing(spec));
  }
  throw Error("unknown ring kind");
}

}  // namespace fivm
