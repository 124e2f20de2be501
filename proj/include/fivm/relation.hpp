#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fivm/common.hpp"
#include "fivm/rings.hpp"

namespace fivm {

/// A finite map from key tuples to non-zero payloads.
///
/// Entries live in a slot array threaded by an insertion-ordered doubly linked
/// list. Each secondary index keeps, per bucket, another intrusive list through
/// the slots, so an entry can leave every index in O(1) without searching.
template <class R>
class Relation {
 public:
  using Ring = R;
  using Payload = typename R::Payload;
  static constexpr std::int32_t kNil = -1;

  enum class Change { None, Inserted, Updated, Erased };

  Relation(const R& ring, std::vector<VarId> schema, OpCounters* counters = nullptr)
      : ring_(&ring), schema_(std::move(schema)), ctr_(counters) {
    for (std::size_t i = 0; i < schema_.size(); ++i)
      for (std::size_t j = i + 1; j < schema_.size(); ++j)
        if (schema_[i] == schema_[j]) throw Error("repeated variable in relation schema");
  }

  const R& ring() const { return *ring_; }
  const std::vector<VarId>& schema() const { return schema_; }
  VarSet varset() const { return make_varset(schema_); }
  std::size_t arity() const { return schema_.size(); }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  OpCounters* counters() const { return ctr_; }
  void set_counters(OpCounters* c) { ctr_ = c; }

  // -- point access ---------------------------------------------------------

  const Payload* find(const Tuple& key) const {
    probe();
    auto it = primary_.find(key);
    if (it == primary_.end()) return nullptr;
    read();
    return &slots_[it->second].value;
  }

  /// R[key] += delta, dropping the entry if the sum is zero.
  Change add(const Tuple& key, const Payload& delta) {
    if (key.size() != schema_.size()) throw Error("tuple arity does not match relation schema");
    probe();
    auto it = primary_.find(key);
    if (it == primary_.end()) {
      if (ring_->is_zero(delta)) return Change::None;
      write();
      insert_new(key, delta);
      return Change::Inserted;
    }
    write();
    std::int32_t id = it->second;
    ring_->add_to(slots_[id].value, delta);
    if (ring_->is_zero(slots_[id].value)) {
      primary_.erase(it);
      remove_slot(id);
      return Change::Erased;
    }
    return Change::Updated;
  }

  /// Overwrites the payload of `key` (erasing it when `value` is zero).
  Change set(const Tuple& key, const Payload& value) {
    probe();
    auto it = primary_.find(key);
    if (it == primary_.end()) {
      if (ring_->is_zero(value)) return Change::None;
      write();
      insert_new(key, value);
      return Change::Inserted;
    }
    write();
    if (ring_->is_zero(value)) {
      std::int32_t id = it->second;
      primary_.erase(it);
      remove_slot(id);
      return Change::Erased;
    }
    slots_[it->second].value = value;
    return Change::Updated;
  }

  bool erase(const Tuple& key) {
    probe();
    auto it = primary_.find(key);
    if (it == primary_.end()) return false;
    write();
    std::int32_t id = it->second;
    primary_.erase(it);
    remove_slot(id);
    return true;
  }

  void clear() {
    std::vector<VarSet> idx;
    std::vector<std::pair<VarSet, VarSet>> didx;
    for (const auto& ix : indices_) idx.push_back(ix.vars);
    for (const auto& dx : distinct_) didx.push_back({dx.group_vars, dx.item_vars});
    slots_.clear();
    free_.clear();
    primary_.clear();
    indices_.clear();
    distinct_.clear();
    head_ = tail_ = kNil;
    size_ = 0;
    for (const auto& v : idx) add_index(v);
    for (const auto& [g, i] : didx) add_distinct_index(g, i);
  }

  // -- iteration in insertion order -------------------------------------------

  template <class F>
  void for_each(F&& f) const {
    for (std::int32_t id = head_; id != kNil; id = slots_[id].next) {
      read();
      f(slots_[id].key, slots_[id].value);
    }
  }

  class const_iterator {
   public:
    const_iterator() = default;
    const_iterator(const Relation* r, std::int32_t id) : r_(r), id_(id) {}
    std::pair<const Tuple&, const Payload&> operator*() const {
      return {r_->slots_[id_].key, r_->slots_[id_].value};
    }
    const_iterator& operator++() {
      id_ = r_->slots_[id_].next;
      return *this;
    }
    bool operator!=(const const_iterator& o) const { return id_ != o.id_; }
    bool operator==(const const_iterator& o) const { return id_ == o.id_; }

   private:
    const Relation* r_ = nullptr;
    std::int32_t id_ = kNil;
  };
  const_iterator begin() const { return {this, head_}; }
  const_iterator end() const { return {this, kNil}; }

  // -- secondary indices --------------------------------------------------------

  /// Index over a subset of the schema; returns the existing one if present.
  int add_index(const VarSet& vars) {
    int found = find_index(vars);
    if (found >= 0) return found;
    Index ix;
    ix.vars = vars;
    ix.positions = positions_of(schema_, vars);
    ix.links.assign(slots_.size(), Link{});
    indices_.push_back(std::move(ix));
    int id = static_cast<int>(indices_.size()) - 1;
    for (std::int32_t s = head_; s != kNil; s = slots_[s].next) index_insert(indices_[id], s);
    return id;
  }
  int find_index(const VarSet& vars) const {
    for (std::size_t i = 0; i < indices_.size(); ++i)
      if (indices_[i].vars == vars) return static_cast<int>(i);
    return -1;
  }
  std::size_t index_count() const { return indices_.size(); }
  const VarSet& index_vars(int idx) const { return indices_.at(idx).vars; }

  /// Calls f(key, payload) for every entry whose projection on the index
  /// variables equals `probe` (given in sorted-variable order).
  template <class F>
  void for_each_match(int idx, const Tuple& probe_key, F&& f) const {
    const Index& ix = indices_.at(idx);
    probe();
    auto it = ix.map.find(probe_key);
    if (it == ix.map.end()) return;
    for (std::int32_t s = ix.buckets[it->second].head; s != kNil; s = ix.links[s].next) {
      read();
      f(slots_[s].key, slots_[s].value);
    }
  }
  std::size_t match_count(int idx, const Tuple& probe_key) const {
    const Index& ix = indices_.at(idx);
    probe();
    auto it = ix.map.find(probe_key);
    return it == ix.map.end() ? 0 : ix.buckets[it->second].size;
  }

  /// Pull-style cursor over one index bucket.
  class MatchCursor {
   public:
    MatchCursor() = default;
    bool valid() const { return id_ != kNil; }
    const Tuple& key() const { return r_->slots_[id_].key; }
    const Payload& value() const { return r_->slots_[id_].value; }
    void next() {
      id_ = r_->indices_[ix_].links[id_].next;
      if (id_ != kNil) r_->read();
    }

   private:
    friend class Relation;
    const Relation* r_ = nullptr;
    int ix_ = 0;
    std::int32_t id_ = kNil;
  };
  MatchCursor match(int idx, const Tuple& probe_key) const {
    MatchCursor c;
    c.r_ = this;
    c.ix_ = idx;
    const Index& ix = indices_.at(idx);
    probe();
    auto it = ix.map.find(probe_key);
    if (it != ix.map.end()) {
      c.id_ = ix.buckets[it->second].head;
      if (c.id_ != kNil) read();
    }
    return c;
  }

  // -- distinct-projection indices -------------------------------------------

  /// Enumerates, for a `group` value, the distinct projections of entries on
  /// `item` (item must contain group). Each projection keeps a support count.
  int add_distinct_index(const VarSet& group, const VarSet& item) {
    for (std::size_t i = 0; i < distinct_.size(); ++i)
      if (distinct_[i].group_vars == group && distinct_[i].item_vars == item) return static_cast<int>(i);
    if (!vs_subset(group, item)) throw Error("distinct index group must be part of its item");
    Distinct dx;
    dx.group_vars = group;
    dx.item_vars = item;
    dx.group_pos = positions_of(schema_, group);
    dx.item_pos = positions_of(schema_, item);
    dx.slot_node.assign(slots_.size(), kNil);
    distinct_.push_back(std::move(dx));
    int id = static_cast<int>(distinct_.size()) - 1;
    for (std::int32_t s = head_; s != kNil; s = slots_[s].next) distinct_insert(distinct_[id], s);
    return id;
  }
  int find_distinct_index(const VarSet& group, const VarSet& item) const {
    for (std::size_t i = 0; i < distinct_.size(); ++i)
      if (distinct_[i].group_vars == group && distinct_[i].item_vars == item) return static_cast<int>(i);
    return -1;
  }
  const VarSet& distinct_item_vars(int idx) const { return distinct_.at(idx).item_vars; }

  class DistinctCursor {
   public:
    DistinctCursor() = default;
    bool valid() const { return id_ != kNil; }
    /// Projection on the item variables, in sorted-variable order.
    const Tuple& item() const { return r_->distinct_[ix_].nodes[id_].item; }
    void next() {
      id_ = r_->distinct_[ix_].nodes[id_].next;
      if (id_ != kNil) r_->read();
    }

   private:
    friend class Relation;
    const Relation* r_ = nullptr;
    int ix_ = 0;
    std::int32_t id_ = kNil;
  };
  DistinctCursor distinct(int idx, const Tuple& group_key) const {
    DistinctCursor c;
    c.r_ = this;
    c.ix_ = idx;
    const Distinct& dx = distinct_.at(idx);
    probe();
    auto it = dx.groups.find(group_key);
    if (it != dx.groups.end()) {
      c.id_ = dx.gbuckets[it->second].head;
      if (c.id_ != kNil) read();
    }
    return c;
  }

  /// Compares every index with a from-scratch rebuild (used by tests).
  bool check_indices() const {
    for (const Index& ix : indices_) {
      std::unordered_map<Tuple, std::vector<std::int32_t>, TupleHash> expect;
      for (std::int32_t s = head_; s != kNil; s = slots_[s].next) expect[project(slots_[s].key, ix.positions)].push_back(s);
      if (expect.size() != ix.map.size()) return false;
      for (const auto& [k, ids] : expect) {
        auto it = ix.map.find(k);
        if (it == ix.map.end()) return false;
        std::vector<std::int32_t> got;
        for (std::int32_t s = ix.buckets[it->second].head; s != kNil; s = ix.links[s].next) got.push_back(s);
        if (got != ids || ix.buckets[it->second].size != ids.size()) return false;
      }
    }
    for (const Distinct& dx : distinct_) {
      std::unordered_map<Tuple, std::int64_t, TupleHash> items;
      for (std::int32_t s = head_; s != kNil; s = slots_[s].next) items[project(slots_[s].key, dx.item_pos)]++;
      if (items.size() != dx.items.size()) return false;
      for (const auto& [k, n] : items) {
        auto it = dx.items.find(k);
        if (it == dx.items.end() || dx.nodes[it->second].count != n) return false;
      }
    }
    std::size_t n = 0;
    for (std::int32_t s = head_; s != kNil; s = slots_[s].next) {
      ++n;
      if (ring_->is_zero(slots_[s].value)) return false;
      auto it = primary_.find(slots_[s].key);
      if (it == primary_.end() || it->second != s) return false;
    }
    return n == size_ && primary_.size() == size_;
  }

 private:
  struct Slot {
    Tuple key;
    Payload value;
    std::int32_t prev = kNil;
    std::int32_t next = kNil;
  };
  struct Link {
    std::int32_t prev = kNil;
    std::int32_t next = kNil;
    std::int32_t bucket = kNil;
  };
  struct Bucket {
    std::int32_t head = kNil;
    std::int32_t tail = kNil;
    std::uint32_t size = 0;
  };
  struct Index {
    VarSet vars;
    std::vector<int> positions;
    std::unordered_map<Tuple, std::int32_t, TupleHash> map;
    std::vector<Bucket> buckets;
    std::vector<std::int32_t> free_buckets;
    std::vector<Link> links;  // parallel to slots_
  };
  struct DNode {
    Tuple item;
    std::int64_t count = 0;
    std::int32_t prev = kNil;
    std::int32_t next = kNil;
    std::int32_t group = kNil;
  };
  struct Distinct {
    VarSet group_vars, item_vars;
    std::vector<int> group_pos, item_pos;
    std::unordered_map<Tuple, std::int32_t, TupleHash> groups;
    std::vector<Bucket> gbuckets;
    std::vector<std::int32_t> free_groups;
    std::unordered_map<Tuple, std::int32_t, TupleHash> items;
    std::vector<DNode> nodes;
    std::vector<std::int32_t> free_nodes;
    std::vector<std::int32_t> slot_node;  // parallel to slots_
  };

  void read() const {
    if (ctr_) ++ctr_->reads;
  }
  void write() const {
    if (ctr_) ++ctr_->writes;
  }
  void probe() const {
    if (ctr_) ++ctr_->probes;
  }

  void insert_new(const Tuple& key, const Payload& value) {
    std::int32_t id;
    if (!free_.empty()) {
      id = free_.back();
      free_.pop_back();
      slots_[id].key = key;
      slots_[id].value = value;
    } else {
      id = static_cast<std::int32_t>(slots_.size());
      slots_.push_back(Slot{key, value});
      for (Index& ix : indices_) ix.links.emplace_back();
      for (Distinct& dx : distinct_) dx.slot_node.push_back(kNil);
    }
    Slot& s = slots_[id];
    s.prev = tail_;
    s.next = kNil;
    if (tail_ != kNil) slots_[tail_].next = id;
    else head_ = id;
    tail_ = id;
    primary_.emplace(key, id);
    ++size_;
    for (Index& ix : indices_) index_insert(ix, id);
    for (Distinct& dx : distinct_) distinct_insert(dx, id);
  }

  void remove_slot(std::int32_t id) {
    for (Index& ix : indices_) index_remove(ix, id);
    for (Distinct& dx : distinct_) distinct_remove(dx, id);
    Slot& s = slots_[id];
    if (s.prev != kNil) slots_[s.prev].next = s.next;
    else head_ = s.next;
    if (s.next != kNil) slots_[s.next].prev = s.prev;
    else tail_ = s.prev;
    s.key.clear();
    s.value = Payload{};
    s.prev = s.next = kNil;
    free_.push_back(id);
    --size_;
  }

  void index_insert(Index& ix, std::int32_t id) {
    Tuple k = project(slots_[id].key, ix.positions);
    auto it = ix.map.find(k);
    std::int32_t b;
    if (it == ix.map.end()) {
      if (!ix.free_buckets.empty()) {
        b = ix.free_buckets.back();
        ix.free_buckets.pop_back();
        ix.buckets[b] = Bucket{};
      } else {
        b = static_cast<std::int32_t>(ix.buckets.size());
        ix.buckets.emplace_back();
      }
      ix.map.emplace(std::move(k), b);
    } else {
      b = it->second;
    }
    Bucket& bk = ix.buckets[b];
    Link& l = ix.links[id];
    l.bucket = b;
    l.prev = bk.tail;
    l.next = kNil;
    if (bk.tail != kNil) ix.links[bk.tail].next = id;
    else bk.head = id;
    bk.tail = id;
    ++bk.size;
  }

  void index_remove(Index& ix, std::int32_t id) {
    Link& l = ix.links[id];
    Bucket& bk = ix.buckets[l.bucket];
    if (l.prev != kNil) ix.links[l.prev].next = l.next;
    else bk.head = l.next;
    if (l.next != kNil) ix.links[l.next].prev = l.prev;
    else bk.tail = l.prev;
    if (--bk.size == 0) {
      ix.map.erase(project(slots_[id].key, ix.positions));
      ix.free_buckets.push_back(l.bucket);
    }
    l = Link{};
  }

  void distinct_insert(Distinct& dx, std::int32_t id) {
    Tuple item = project(slots_[id].key, dx.item_pos);
    auto it = dx.items.find(item);
    std::int32_t n;
    if (it != dx.items.end()) {
      n = it->second;
      ++dx.nodes[n].count;
    } else {
      if (!dx.free_nodes.empty()) {
        n = dx.free_nodes.back();
        dx.free_nodes.pop_back();
        dx.nodes[n] = DNode{};
      } else {
        n = static_cast<std::int32_t>(dx.nodes.size());
        dx.nodes.emplace_back();
      }
      dx.nodes[n].item = item;
      dx.nodes[n].count = 1;
      dx.items.emplace(std::move(item), n);
      Tuple g = project(slots_[id].key, dx.group_pos);
      auto git = dx.groups.find(g);
      std::int32_t b;
      if (git == dx.groups.end()) {
        if (!dx.free_groups.empty()) {
          b = dx.free_groups.back();
          dx.free_groups.pop_back();
          dx.gbuckets[b] = Bucket{};
        } else {
          b = static_cast<std::int32_t>(dx.gbuckets.size());
          dx.gbuckets.emplace_back();
        }
        dx.groups.emplace(std::move(g), b);
      } else {
        b = git->second;
      }
      Bucket& bk = dx.gbuckets[b];
      DNode& nd = dx.nodes[n];
      nd.group = b;
      nd.prev = bk.tail;
      nd.next = kNil;
      if (bk.tail != kNil) dx.nodes[bk.tail].next = n;
      else bk.head = n;
      bk.tail = n;
      ++bk.size;
    }
    dx.slot_node[id] = n;
  }

  void distinct_remove(Distinct& dx, std::int32_t id) {
    std::int32_t n = dx.slot_node[id];
    dx.slot_node[id] = kNil;
    DNode& nd = dx.nodes[n];
    if (--nd.count > 0) return;
    Bucket& bk = dx.gbuckets[nd.group];
    if (nd.prev != kNil) dx.nodes[nd.prev].next = nd.next;
    else bk.head = nd.next;
    if (nd.next != kNil) dx.nodes[nd.next].prev = nd.prev;
    else bk.tail = nd.prev;
    if (--bk.size == 0) {
      dx.groups.erase(project(slots_[id].key, dx.group_pos));
      dx.free_groups.push_back(nd.group);
    }
    dx.items.erase(nd.item);
    nd = DNode{};
    dx.free_nodes.push_back(n);
  }

  const R* ring_;
  std::vector<VarId> schema_;
  OpCounters* ctr_;
  std::vector<Slot> slots_;
  std::vector<std::int32_t> free_;
  std::int32_t head_ = kNil;
  std::int32_t tail_ = kNil;
  std::size_t size_ = 0;
  std::unordered_map<Tuple, std::int32_t, TupleHash> primary_;
  std::vector<Index> indices_;
  std::vector<Distinct> distinct_;
};

/// Content equality up to insertion order (tolerance applies to real scalars).
template <class R>
bool same_content(const Relation<R>& a, const Relation<R>& b, double tol = 0.0, std::string* why = nullptr) {
  if (make_varset(a.schema()) != make_varset(b.schema())) {
    if (why) *why = "schema differs";
    return false;
  }
  std::vector<int> pos = positions_of(b.schema(), a.schema());
  std::size_t matched = 0;
  bool ok = true;
  const R& ring = a.ring();
  std::unordered_map<Tuple, const typename R::Payload*, TupleHash> bm;
  for (auto [k, v] : b) {
    Tuple ka(k.size());
    for (std::size_t i = 0; i < pos.size(); ++i) ka[i] = k[pos[i]];
    bm.emplace(std::move(ka), &v);
  }
  for (auto [k, v] : a) {
    auto it = bm.find(k);
    if (it == bm.end()) {
      if (why) *why = "key missing on right: " + ring.to_string(v);
      ok = false;
      break;
    }
    if (!ring.approx_equal(v, *it->second, tol)) {
      if (why) *why = "payload differs: " + ring.to_string(v) + " vs " + ring.to_string(*it->second);
      ok = false;
      break;
    }
    ++matched;
  }
  if (ok && matched != b.size()) {
    if (why) *why = "extra keys on right";
    ok = false;
  }
  return ok;
}

}  // namespace fivm
