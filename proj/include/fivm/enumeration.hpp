#pragma once

#include <fmt/format.h>

#include <ostream>
#include <type_traits>

#include "fivm/ivm.hpp"

namespace fivm {

/// Pull-style enumeration of the distinct result tuples with their payloads.
/// Free-connex trees are walked variable by variable (one cursor per free
/// variable, top-down and left to right); plain trees scan their root.
template <class R>
class Enumerator {
 public:
  using View = typename Runtime<R>::View;
  using Base = typename R::Payload;

  explicit Enumerator(const Runtime<R>& rt) : rt_(rt), vals_(rt.tree().query.num_vars(), 0) {
    const ViewTree& t = rt.tree();
    if (!t.free_connex) {
      schema_ = rt.root().schema();
      return;
    }
    schema_ = t.enum_order;
    payload_views_ = rt.payload_views();
    for (VarId x : t.enum_order) {
      Level l;
      l.x = x;
      l.v = rt.stored(t.enum_view[x]);
      if (!l.v) throw Error("enumeration view of " + t.query.var_name(x) + " is not materialized");
      const VarSet& keys = t.node(t.enum_view[x]).keys;
      l.group = vs_intersect(keys, t.order.ancestors(x));
      VarSet item = vs_union(l.group, {x});
      if (item == keys && l.group.empty()) {
        l.mode = Mode::Scan;
        l.xpos = pos_in(l.v->schema(), x);
      } else if (item == keys) {
        l.mode = Mode::Match;
        l.idx = l.v->find_index(l.group);
        l.xpos = pos_in(l.v->schema(), x);
      } else {
        l.mode = Mode::Distinct;
        l.idx = l.v->find_distinct_index(l.group, item);
        l.xpos = pos_in(item, x);
      }
      if (l.mode != Mode::Scan && l.idx < 0)
        throw Error("missing enumeration index on " + t.node(t.enum_view[x]).name + " (index planning bug)");
      levels_.push_back(l);
    }
  }

  /// Output column order: free variables in enumeration order (plain trees: root schema).
  const std::vector<VarId>& schema() const { return schema_; }

  void reset() {
    started_ = false;
    done_ = false;
  }

  /// Next tuple with a non-zero payload; false once exhausted.
  bool next(Tuple& t, Base& p) {
    const R& base = rt_.base_ring();
    if (!rt_.tree().free_connex) {
      if (!started_) {
        started_ = true;
        it_ = rt_.root().begin();
      } else if (it_ != rt_.root().end()) {
        ++it_;
      }
      for (; it_ != rt_.root().end(); ++it_) {
        if (auto* c = rt_.root().counters()) ++c->reads;
        const auto& [k, v] = *it_;
        if (base.is_zero(v.p)) continue;
        t = k;
        p = v.p;
        return true;
      }
      return false;
    }
    if (done_) return false;
    int k = static_cast<int>(levels_.size());
    if (!started_) {
      started_ = true;
      depth_ = 0;
      open(0);
    } else {
      advance(k - 1);
      depth_ = k - 1;
    }
    while (true) {
      // descend while cursors are valid, backtrack when one runs dry
      if (!valid(depth_)) {
        if (depth_ == 0) {
          done_ = true;
          return false;
        }
        --depth_;
        advance(depth_);
        continue;
      }
      vals_[levels_[depth_].x] = value(depth_);
      if (depth_ < k - 1) {
        ++depth_;
        open(depth_);
        continue;
      }
      Base pay = payload_here();
      if (!base.is_zero(pay)) {
        t.resize(schema_.size());
        for (std::size_t i = 0; i < schema_.size(); ++i) t[i] = vals_[schema_[i]];
        p = std::move(pay);
        return true;
      }
      advance(depth_);
    }
  }

 private:
  enum class Mode { Scan, Match, Distinct };
  struct Level {
    VarId x = -1;
    const View* v = nullptr;
    Mode mode = Mode::Scan;
    int idx = -1;
    VarSet group;
    int xpos = 0;
    typename View::MatchCursor mc;
    typename View::DistinctCursor dc;
    typename View::const_iterator it;
  };

  static int pos_in(const std::vector<VarId>& s, VarId x) {
    return static_cast<int>(std::find(s.begin(), s.end(), x) - s.begin());
  }

  void open(int d) {
    Level& l = levels_[d];
    Tuple probe(l.group.size());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = vals_[l.group[i]];
    switch (l.mode) {
      case Mode::Scan:
        l.it = l.v->begin();
        if (l.it != l.v->end()) count_read(l);
        break;
      case Mode::Match: l.mc = l.v->match(l.idx, probe); break;
      case Mode::Distinct: l.dc = l.v->distinct(l.idx, probe); break;
    }
  }
  void advance(int d) {
    Level& l = levels_[d];
    switch (l.mode) {
      case Mode::Scan:
        ++l.it;
        if (l.it != l.v->end()) count_read(l);
        break;
      case Mode::Match: l.mc.next(); break;
      case Mode::Distinct: l.dc.next(); break;
    }
  }
  bool valid(int d) const {
    const Level& l = levels_[d];
    switch (l.mode) {
      case Mode::Scan: return l.it != l.v->end();
      case Mode::Match: return l.mc.valid();
      case Mode::Distinct: return l.dc.valid();
    }
    return false;
  }
  Value value(int d) const {
    const Level& l = levels_[d];
    switch (l.mode) {
      case Mode::Scan: return (*l.it).first[l.xpos];
      case Mode::Match: return l.mc.key()[l.xpos];
      case Mode::Distinct: return l.dc.item()[l.xpos];
    }
    return 0;
  }
  static void count_read(const Level& l) {
    if (auto* c = l.v->counters()) ++c->reads;
  }

  Base payload_here() const {
    const R& base = rt_.base_ring();
    Base acc = base.one();
    for (int id : payload_views_) {
      const View& v = *rt_.stored(id);
      Tuple key(v.schema().size());
      for (std::size_t i = 0; i < key.size(); ++i) key[i] = vals_[v.schema()[i]];
      const auto* p = v.find(key);
      if (!p) return base.zero();
      acc = base.mul(acc, p->p);
    }
    return acc;
  }

  const Runtime<R>& rt_;
  std::vector<Value> vals_;
  std::vector<VarId> schema_;
  std::vector<int> payload_views_;
  std::vector<Level> levels_;
  typename View::const_iterator it_;
  int depth_ = 0;
  bool started_ = false;
  bool done_ = false;
};

/// Calls f(tuple, payload) for every result tuple; returns how many.
template <class R, class F>
std::size_t enumerate_result(const Runtime<R>& rt, F&& f) {
  Enumerator<R> e(rt);
  Tuple t;
  typename R::Payload p;
  std::size_t n = 0;
  while (e.next(t, p)) {
    f(static_cast<const Tuple&>(t), static_cast<const typename R::Payload&>(p));
    ++n;
  }
  return n;
}

/// Payload of one result tuple given over `schema` (all free variables);
/// zero when the tuple is not in the result.
template <class R>
typename R::Payload payload_of_tuple(const Runtime<R>& rt, const std::vector<VarId>& schema, const Tuple& t) {
  const ViewTree& tree = rt.tree();
  if (make_varset(schema) != tree.query.free) throw Error("tuple schema must be the free variables");
  std::vector<Value> vals(tree.query.num_vars(), 0);
  for (std::size_t i = 0; i < schema.size(); ++i) vals[schema[i]] = t[i];
  const R& base = rt.base_ring();
  std::vector<int> views;
  if (tree.free_connex) views = rt.payload_views();
  else views = {tree.root};
  typename R::Payload acc = base.one();
  for (int id : views) {
    const auto& v = *rt.stored(id);
    Tuple key(v.schema().size());
    for (std::size_t i = 0; i < key.size(); ++i) key[i] = vals[v.schema()[i]];
    const auto* p = v.find(key);
    if (!p) return base.zero();
    acc = base.mul(acc, p->p);
  }
  return acc;
}

/// Full listing in the keys representation.
template <class R>
Relation<R> materialize_listing(const Runtime<R>& rt) {
  Enumerator<R> e(rt);
  Relation<R> out(rt.base_ring(), e.schema());
  Tuple t;
  typename R::Payload p;
  while (e.next(t, p)) out.add(t, p);
  return out;
}

template <class S>
using ScalarRing = std::conditional_t<std::is_integral_v<S>, IntegerRing, RealRing>;

namespace detail {

template <class S>
Relation<ScalarRing<S>> listing_relation(const Query& q) {
  return Relation<ScalarRing<S>>(ScalarRing<S>(), q.free);
}

}  // namespace detail

/// Listing read off the relational payload at the root (payload mode):
/// one key per entry, over the free variables in sorted order.
template <class S>
Relation<ScalarRing<S>> relational_listing(const Runtime<RelationalRing<S>>& rt) {
  const Query& q = rt.tree().query;
  if (q.free_lift_mode != FreeLiftMode::RelationalPayload) throw Error("query does not use relational payloads");
  auto out = detail::listing_relation<S>(q);
  for (auto [k, p] : rt.root())
    for (const auto& [g, s] : p.p.entries) {
      Tuple key;
      for (const auto& [var, x] : g) key.push_back(x);
      if (key.size() != q.free.size()) throw Error("payload entry does not cover the free variables");
      out.add(key, s);
    }
  return out;
}

/// Rebuilds the listing from the factorized payloads: every view keeps only
/// its own variable (its payload projected onto that variable) and the
/// tuples are stitched top-down, multiplying the counts of the lowest views.
/// Needs every view stored and no free variable below a bound one.
template <class S>
Relation<ScalarRing<S>> stitch_factorized(const Runtime<RelationalRing<S>>& rt) {
  const ViewTree& t = rt.tree();
  const Query& q = t.query;
  const auto& ring = rt.base_ring();
  auto out = detail::listing_relation<S>(q);
  std::vector<char> free_below(t.nodes.size(), 0), free_view_child(t.nodes.size(), 0);
  for (const auto& n : t.nodes)
    free_below[n.id] = n.is_view() && (n.at_var < 0 || !vs_intersect(t.order.subtree_vars(n.at_var), q.free).empty());
  for (const auto& n : t.nodes)
    for (int c : n.children)
      if (t.node(c).is_view() && free_below[c]) free_view_child[n.id] = 1;
  std::vector<Value> vals(q.num_vars(), 0);
  auto key_of = [&](const std::vector<VarId>& s) {
    Tuple k(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) k[i] = vals[s[i]];
    return k;
  };
  std::function<void(std::vector<int>, S)> go = [&](std::vector<int> pending, S mult) {
    if (pending.empty()) {
      out.add(key_of(q.free), mult);
      return;
    }
    int id = pending.back();
    pending.pop_back();
    const ViewNode& n = t.node(id);
    const auto* s = rt.stored(id);
    if (!s) throw Error("stitching needs every view materialized");
    const auto* p = s->find(key_of(n.schema));
    if (!p) return;
    if (n.kind == ViewKind::Indicator) return go(pending, mult);
    if (n.kind == ViewKind::Leaf) return go(pending, mult * ring.total(p->p));
    if (!free_below[id]) return go(pending, mult * ring.total(p->p));
    if (n.at_var < 0) {
      pending.insert(pending.end(), n.children.begin(), n.children.end());
      return go(pending, mult);
    }
    if (!q.is_free(n.at_var)) throw Error("stitching needs free variables above bound ones");
    auto fact = ring.project(p->p, {n.at_var});
    for (const auto& [g, m] : fact.entries) {
      vals[n.at_var] = g.at(0).second;
      if (!free_view_child[id]) {
        go(pending, mult * m);
      } else {
        std::vector<int> next = pending;
        next.insert(next.end(), n.children.begin(), n.children.end());
        go(next, mult);
      }
    }
  };
  go({t.root}, S(1));
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_value(Value v, ValueKind k) {
  if (k == ValueKind::Real) return fmt::format("{}", decode_real(v));
  return fmt::format("{}", v);
}

template <class R>
std::vector<std::string> payload_columns(const R& ring) {
  if constexpr (std::is_same_v<R, ContinuousCovarianceRing> || std::is_same_v<R, GeneralCovarianceRing>) {
    std::vector<std::string> cols{"c"};
    for (int i = 1; i <= ring.degree(); ++i) cols.push_back(fmt::format("s_{}", i));
    for (int i = 1; i <= ring.degree(); ++i)
      for (int j = i; j <= ring.degree(); ++j) cols.push_back(fmt::format("q_{}_{}", i, j));
    return cols;
  } else {
    return {"payload"};
  }
}

template <class R>
std::vector<std::string> payload_cells(const R& ring, const typename R::Payload& p) {
  if constexpr (std::is_same_v<R, ContinuousCovarianceRing> || std::is_same_v<R, GeneralCovarianceRing>) {
    const auto& b = ring.base();
    auto cell = [&](const auto* x) { return x ? b.to_string(*x) : b.to_string(b.zero()); };
    std::vector<std::string> out{b.to_string(p.c)};
    for (int i = 0; i < ring.degree(); ++i) out.push_back(cell(p.s_at(i)));
    for (int i = 0; i < ring.degree(); ++i)
      for (int j = i; j < ring.degree(); ++j) out.push_back(cell(p.q_at(i, j)));
    return out;
  } else {
    return {ring.to_string(p)};
  }
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string r = "\"";
  for (char c : s) {
    if (c == '"') r += '"';
    r += c;
  }
  return r + "\"";
}

/// Header: variable names then payload columns; one row per entry in insertion order.
template <class R>
void write_listing_csv(std::ostream& os, const Relation<R>& rel, const Query& q) {
  std::vector<std::string> head;
  for (VarId v : rel.schema()) head.push_back(q.var_name(v));
  for (auto& c : payload_columns(rel.ring())) head.push_back(c);
  for (std::size_t i = 0; i < head.size(); ++i) os << (i ? "," : "") << csv_escape(head[i]);
  os << "\n";
  for (auto [k, p] : rel) {
    std::vector<std::string> row;
    for (std::size_t i = 0; i < k.size(); ++i) row.push_back(format_value(k[i], q.vars[rel.schema()[i]].kind));
    for (auto& c : payload_cells(rel.ring(), p)) row.push_back(c);
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_escape(row[i]);
    os << "\n";
  }
}

}  // namespace fivm
