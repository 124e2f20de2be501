#pragma once

#include <map>
#include <string>
#include <vector>

#include "fivm/common.hpp"
#include "fivm/rings.hpp"

namespace fivm {

enum class FreeLiftMode {
  GroupBy,            // free variables stay in the result keys
  RelationalPayload,  // free variables are lifted into relational payloads
};

struct VarInfo {
  std::string name;
  ValueKind kind = ValueKind::Int;
};

/// One occurrence of a relation symbol in the query body; its index is the leaf id.
struct RelationOccurrence {
  std::string name;
  std::vector<VarId> schema;
};

class Query {
 public:
  std::vector<VarInfo> vars;
  std::vector<RelationOccurrence> relations;
  VarSet free;
  RingSpec ring;
  std::map<VarId, LiftingFunction> lifts;
  FreeLiftMode free_lift_mode = FreeLiftMode::GroupBy;

  /// Builds a query from relation declarations; variables get ids in order of first use.
  static Query make(const std::vector<std::pair<std::string, std::vector<std::string>>>& rels,
                    const std::vector<std::string>& free_vars, RingSpec ring = RingSpec::integer());

  VarId add_var(const std::string& name, ValueKind kind = ValueKind::Int);
  int add_relation(const std::string& name, const std::vector<std::string>& var_names);
  VarId var(const std::string& name) const;
  bool has_var(const std::string& name) const;
  const std::string& var_name(VarId v) const { return vars.at(v).name; }
  std::size_t num_vars() const { return vars.size(); }
  VarSet all_vars() const;
  VarSet bound_vars() const;
  bool is_free(VarId v) const { return vs_contains(free, v); }
  /// Leaf ids whose schema contains v.
  std::vector<int> rels_of(VarId v) const;
  std::vector<int> occurrences_of(const std::string& relation_name) const;

  void set_free(const std::vector<std::string>& names);
  void set_lift(const std::string& var_name, LiftMode mode, int slot = 0);
  /// Gives every variable that needs a lift and has none a default one:
  /// ToOne for bound variables, singletons for free ones in payload mode.
  void complete_lifts();
  /// Variables that the view trees marginalize (everything in payload mode).
  VarSet lifted_vars() const;
  const LiftingFunction& lift_of(VarId v) const;

  void validate() const;
  std::string describe() const;
  std::string names(const VarSet& s) const;
};

// ---------------------------------------------------------------------------
// Hypergraphs

struct Hyperedge {
  VarSet vars;
  bool indicator = false;
  int tag = -1;
};

/// Ear removal to a fixpoint: drop variables that occur in one edge only and
/// edges contained in another edge (indicator edges go first among equals).
/// Empty edges are dropped, so an acyclic input leaves nothing behind.
std::vector<Hyperedge> gyo_reduce(std::vector<Hyperedge> edges);
bool is_acyclic(const std::vector<VarSet>& edges);

struct QueryClass {
  bool acyclic = false;
  bool free_connex = false;
  bool hierarchical = false;
  bool q_hierarchical = false;
  std::string describe() const;
};
QueryClass classify(const Query& q);

// ---------------------------------------------------------------------------
// Variable orders

struct ForestNode {
  std::string var;
  std::vector<ForestNode> children;
};
using Forest = std::vector<ForestNode>;

std::string forest_to_string(const Forest& f);

struct VariableOrder {
  std::vector<VarId> parent;                 // -1 at roots
  std::vector<std::vector<VarId>> children;  // in forest order
  std::vector<VarId> roots;
  std::vector<VarSet> dep;
  std::vector<VarId> leaf_var;               // lowest variable of each relation occurrence
  std::vector<std::vector<int>> leaves_at;   // occurrences attached under each variable
  std::vector<int> depth;

  VarSet ancestors(VarId x) const;
  VarSet subtree_vars(VarId x) const;
  std::vector<int> subtree_leaves(VarId x) const;
  bool is_free_top(const VarSet& free) const;
  /// Variables X for which {X} and dep(X) are not covered by one relation schema.
  std::vector<VarId> covering_violations(const Query& q) const;
  Forest to_forest(const Query& q) const;
};

/// Validates a forest against the query and computes dep.
VariableOrder infer_dep(const Forest& forest, const Query& q);

/// Canonical free-top order of a q-hierarchical query.
Forest canonical_free_top_order(const Query& q);
/// Variable order obtained by eliminating variables from the end of `sequence`.
Forest order_from_sequence(const Query& q, const std::vector<VarId>& sequence);
/// Non-optimal default: descending number of relations, then by name.
Forest fallback_order(const Query& q);
/// Free-top variant of the default: free variables first.
Forest fallback_free_top_order(const Query& q);

// ---------------------------------------------------------------------------
// Functional dependencies

struct FunctionalDependency {
  VarSet lhs;
  VarSet rhs;
};
using FDSet = std::vector<FunctionalDependency>;

FDSet parse_fds(const Query& q, const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& fds);
VarSet fd_closure(const VarSet& s, const FDSet& fds);
/// Relation schemas and the free set extended by their closures.
Query sigma_reduct(const Query& q, const FDSet& fds);
/// Order for `q` inferred from its reduct (canonical if the reduct is q-hierarchical).
Forest order_via_reduct(const Query& q, const FDSet& fds);

}  // namespace fivm
