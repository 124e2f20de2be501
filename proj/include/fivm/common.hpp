#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fivm {

/// Every key attribute is stored as a 64-bit word. Integers are stored as-is,
/// categorical values as dictionary ids, reals as their IEEE bit pattern.
using Value = std::int64_t;
using VarId = int;
using Tuple = std::vector<Value>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueKind { Int, Real, Categorical };

inline Value encode_real(double x) {
  if (x == 0.0) x = 0.0;  // fold -0.0 so equal numbers hash equally
  return std::bit_cast<Value>(x);
}
inline double decode_real(Value v) { return std::bit_cast<double>(v); }

/// Numeric reading of a key value; categorical ids have no numeric meaning.
inline double numeric_value(Value v, ValueKind kind) {
  switch (kind) {
    case ValueKind::Int: return static_cast<double>(v);
    case ValueKind::Real: return decode_real(v);
    case ValueKind::Categorical: break;
  }
  throw Error("categorical value used where a number is required");
}

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

struct TupleHash {
  std::size_t operator()(const Tuple& t) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ t.size();
    for (Value v : t) h = mix64(h ^ static_cast<std::uint64_t>(v)) + 0x9e3779b97f4a7c15ULL;
    return static_cast<std::size_t>(h);
  }
};

/// Work counters shared by every relation attached to one runtime.
struct OpCounters {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t probes = 0;

  std::uint64_t total() const { return reads + writes + probes; }
  void reset() { *this = OpCounters{}; }
  OpCounters operator-(const OpCounters& o) const {
    return {reads - o.reads, writes - o.writes, probes - o.probes};
  }
  bool operator==(const OpCounters&) const = default;
};

/// Sorted, duplicate-free set of variable ids.
using VarSet = std::vector<VarId>;

inline VarSet make_varset(std::vector<VarId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}
inline bool vs_contains(const VarSet& s, VarId x) { return std::binary_search(s.begin(), s.end(), x); }
inline VarSet vs_union(const VarSet& a, const VarSet& b) {
  VarSet r;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  return r;
}
inline VarSet vs_intersect(const VarSet& a, const VarSet& b) {
  VarSet r;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  return r;
}
inline VarSet vs_minus(const VarSet& a, const VarSet& b) {
  VarSet r;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
  return r;
}
inline bool vs_subset(const VarSet& a, const VarSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

/// Positions of `vars` inside `schema`, in the order of `vars`.
inline std::vector<int> positions_of(const std::vector<VarId>& schema, const std::vector<VarId>& vars) {
  std::vector<int> pos;
  pos.reserve(vars.size());
  for (VarId v : vars) {
    auto it = std::find(schema.begin(), schema.end(), v);
    if (it == schema.end()) throw Error("variable " + std::to_string(v) + " not in schema");
    pos.push_back(static_cast<int>(it - schema.begin()));
  }
  return pos;
}

inline Tuple project(const Tuple& t, const std::vector<int>& pos) {
  Tuple r;
  r.reserve(pos.size());
  for (int p : pos) r.push_back(t[p]);
  return r;
}

}  // namespace fivm
