#pragma once

#include <string>
#include <vector>

#include "fivm/common.hpp"
#include "fivm/query.hpp"
#include "fivm/rings.hpp"

namespace fivm {

enum class ViewKind {
  Leaf,             // a relation occurrence
  JoinOnly,         // join of the children, nothing summed out
  MarginalizeJoin,  // join of the children with some variables summed out
  Indicator,        // support of another relation projected on a few keys
};

enum class IndexRole { Primary, Secondary, Update, Enumeration };

struct IndexReq {
  VarSet vars;
  IndexRole role = IndexRole::Primary;
};

/// Order in which siblings are probed when a delta arrives from one child.
/// `probe[i]` is the part of sibling i's keys already bound at that point.
struct DeltaPlan {
  std::vector<int> siblings;  // node ids
  std::vector<VarSet> probe;
};

struct ViewNode {
  int id = -1;
  ViewKind kind = ViewKind::Leaf;
  std::string name;
  VarSet keys;
  std::vector<VarId> schema;  // storage column order (leaf schema, otherwise sorted keys)
  std::vector<int> rels;      // relation occurrences below, sorted
  std::vector<int> indicator_sources;  // sources of indicator nodes below, sorted
  VarId at_var = -1;          // -1 for leaves, indicators and synthetic roots
  int leaf = -1;              // Leaf: its occurrence id; Indicator: the source occurrence
  int parent = -1;
  std::vector<int> children;
  std::vector<LiftingFunction> marg;  // summed-out variables, innermost first
  bool materialized = false;
  bool pinned = false;  // needed for enumeration; never compacted away
  std::vector<IndexReq> indices;
  std::vector<std::pair<VarSet, VarSet>> distinct_indices;  // (group, item)
  std::vector<DeltaPlan> delta_plans;                       // parallel to children

  bool is_view() const { return kind == ViewKind::JoinOnly || kind == ViewKind::MarginalizeJoin; }
  bool stored() const { return materialized || kind == ViewKind::Leaf || kind == ViewKind::Indicator; }
  bool has_index(const VarSet& v) const;
};

enum class TreeShape { Auto, Plain, FreeConnex };

struct ViewTree {
  Query query;
  VariableOrder order;
  std::vector<ViewNode> nodes;
  int root = -1;
  bool free_connex = false;           // built with the free-connex construction
  std::vector<int> leaf_node;         // occurrence id -> node id
  std::vector<int> updatable;         // occurrence ids, sorted
  std::vector<int> enum_view;         // per variable (free-connex trees only), -1 otherwise
  std::vector<VarId> enum_order;      // free variables, top-down and left to right

  const ViewNode& node(int id) const { return nodes.at(id); }
  ViewNode& node(int id) { return nodes.at(id); }
  std::vector<int> path_to_root(int id) const;  // excludes `id`
  std::vector<int> indicator_nodes() const;
  std::vector<int> view_nodes() const;          // non-leaf, non-indicator, pre-order
  std::vector<int> preorder() const;
  bool is_updatable(int occurrence) const;
  /// Some leaf or indicator source below `id` is updatable.
  bool subtree_updatable(int id) const;
  int find_view(const std::string& name) const;  // -1 if absent
  /// One view per line: name, keys, definition and flags.
  std::string dump() const;
  /// Structural checks (tree shape, key containment, one leaf per occurrence).
  void check() const;
};

/// Plain construction: every variable gets a view whose keys are dep(X) and
/// the free variables below it. In payload mode free variables are lifted instead.
ViewTree build_view_tree(const Query& q, const VariableOrder& order);

/// Construction for free-top orders with join views over {X} and dep(X)
/// and summed views where a sibling needs them.
ViewTree build_free_connex_tree(const Query& q, const VariableOrder& order);

/// Adds indicator children where relations outside a view close a cycle with those inside.
void add_indicator_projections(ViewTree& t);

/// Root always; a child iff a sibling subtree is updatable. Pinned views too.
void choose_materialization(ViewTree& t, const std::vector<int>& updatable);

/// Merges single-child marginalization chains over one relation and drops
/// single-child join views that repeat their child's keys.
void compact_and_dedupe(ViewTree& t);

/// Delta plans and index requirements of every stored node.
void plan_indices(ViewTree& t);

struct CompileOptions {
  TreeShape shape = TreeShape::Auto;
  bool indicators = true;
  bool compact = true;
  std::vector<int> updatable;  // empty = every occurrence
  bool all_updatable = true;   // ignore `updatable` and use every occurrence
  bool materialize_all = false;  // keep every view (needed to stitch factorized payloads)
};

/// Full pipeline: construction, indicators, materialization, compaction, indices.
ViewTree compile(const Query& q, const VariableOrder& order, const CompileOptions& opt = {});

std::string to_string(ViewKind k);
std::string to_string(IndexRole r);

}  // namespace fivm
