#include <gtest/gtest.h>

#include "fivm/viewtree.hpp"
#include "support.hpp"

using namespace fivm;
using fivm::testing::Rng;
using fivm::testing::Shape;
using fivm::testing::uniform;

namespace {

Forest node(const std::string& v, Forest kids = {}) { return {ForestNode{v, std::move(kids)}}; }
Forest join(Forest a, const Forest& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}
Forest rst_order() { return node("A", join(node("B"), node("C", join(node("D"), node("E"))))); }

Query rst(std::vector<std::string> free = {}) {
  return Query::make({{"R", {"A", "B"}}, {"S", {"A", "C", "E"}}, {"T", {"C", "D"}}}, free);
}

VarSet vs(const Query& q, std::vector<std::string> names) {
  VarSet s;
  for (auto& n : names) s.push_back(q.var(n));
  return make_varset(s);
}

const ViewNode& view(const ViewTree& t, const std::string& name) {
  int id = t.find_view(name);
  if (id < 0) throw Error("no view " + name + " in\n" + t.dump());
  return t.node(id);
}

std::vector<std::string> materialized_views(const ViewTree& t) {
  std::vector<std::string> out;
  for (int id : t.view_nodes())
    if (t.node(id).materialized) out.push_back(t.node(id).name);
  std::sort(out.begin(), out.end());
  return out;
}

bool has_index(const ViewNode& n, const VarSet& v, IndexRole role) {
  for (const auto& r : n.indices)
    if (r.vars == v && r.role == role) return true;
  return false;
}

}  // namespace

TEST(PlainTree, ExampleWithoutFreeVariables) {
  Query q = rst();
  CompileOptions opt;
  opt.compact = false;
  ViewTree t = compile(q, infer_dep(rst_order(), q), opt);
  EXPECT_FALSE(t.free_connex);
  EXPECT_EQ(t.view_nodes().size(), 5u);
  EXPECT_EQ(t.node(t.root).name, "V@A_RST");
  EXPECT_EQ(t.node(t.root).keys, VarSet{});
  EXPECT_EQ(view(t, "V@B_R").keys, vs(q, {"A"}));
  EXPECT_EQ(view(t, "V@C_ST").keys, vs(q, {"A"}));
  EXPECT_EQ(view(t, "V@D_T").keys, vs(q, {"C"}));
  EXPECT_EQ(view(t, "V@E_S").keys, vs(q, {"A", "C"}));
  EXPECT_EQ(view(t, "V@E_S").kind, ViewKind::MarginalizeJoin);
  ASSERT_EQ(view(t, "V@C_ST").marg.size(), 1u);
  EXPECT_EQ(view(t, "V@C_ST").marg[0].target, q.var("C"));
}

TEST(PlainTree, FreeVariablesStayInKeys) {
  Query q = rst({"A", "C"});
  CompileOptions opt;
  opt.shape = TreeShape::Plain;
  ViewTree t = compile(q, infer_dep(rst_order(), q), opt);
  EXPECT_EQ(t.node(t.root).keys, vs(q, {"A", "C"}));
  EXPECT_EQ(t.node(t.root).kind, ViewKind::JoinOnly);
  EXPECT_EQ(view(t, "V@C_ST").keys, vs(q, {"A", "C"}));
  EXPECT_EQ(view(t, "V@C_ST").kind, ViewKind::JoinOnly);
}

TEST(FreeConnexTree, ExampleOrder) {
  Query q = rst({"A", "C"});
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  ASSERT_TRUE(t.free_connex);
  const ViewNode& root = t.node(t.root);
  EXPECT_EQ(root.name, "H@A_RST");
  EXPECT_EQ(root.keys, vs(q, {"A"}));
  const ViewNode& hc = view(t, "H@C_ST");
  EXPECT_EQ(hc.keys, vs(q, {"A", "C"}));
  EXPECT_EQ(hc.kind, ViewKind::JoinOnly);
  EXPECT_EQ(t.node(hc.parent).name, "V@C_ST");
  EXPECT_EQ(t.node(hc.parent).keys, vs(q, {"A"}));
  EXPECT_EQ(view(t, "V@D_T").keys, vs(q, {"C"}));
  const ViewNode& es = view(t, "V@E_S");
  EXPECT_EQ(es.keys, vs(q, {"A", "C"}));
  EXPECT_TRUE(has_index(es, vs(q, {"A", "C"}), IndexRole::Primary));
  EXPECT_TRUE(has_index(es, vs(q, {"A"}), IndexRole::Secondary));
  EXPECT_TRUE(has_index(es, vs(q, {"C"}), IndexRole::Update));
  EXPECT_EQ(t.enum_order, vs(q, {"A", "C"}));
  EXPECT_EQ(t.enum_view[q.var("A")], t.root);
  EXPECT_EQ(t.node(t.enum_view[q.var("C")]).name, "H@C_ST");
  // every view is materialized when all relations change
  for (int id : t.view_nodes()) EXPECT_TRUE(t.node(id).materialized) << t.node(id).name;
}

TEST(FreeConnexTree, QHierarchicalNeedsNoUpdateIndices) {
  Query q = Query::make({{"R", {"A", "B"}}, {"S", {"A", "C", "E"}}, {"T", {"A", "C", "D"}}}, {"A", "C"});
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  ASSERT_TRUE(t.free_connex);
  EXPECT_EQ(view(t, "V@D_T").keys, vs(q, {"A", "C"}));
  EXPECT_EQ(view(t, "H@C_ST").keys, vs(q, {"A", "C"}));
  for (const auto& n : t.nodes)
    for (const auto& r : n.indices) EXPECT_NE(r.role, IndexRole::Update) << n.name;
}

TEST(FreeConnexTree, AutoFallsBackForNonFreeTopOrder) {
  Query q = rst({"B"});
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  EXPECT_FALSE(t.free_connex);
  CompileOptions opt;
  opt.shape = TreeShape::FreeConnex;
  EXPECT_THROW(compile(q, infer_dep(rst_order(), q), opt), Error);
}

TEST(Indicators, Triangle) {
  Query q = Query::make({{"R", {"A", "B"}}, {"S", {"B", "C"}}, {"T", {"C", "A"}}}, {});
  ViewTree t = compile(q, infer_dep(node("A", node("B", node("C"))), q));
  auto ind = t.indicator_nodes();
  ASSERT_EQ(ind.size(), 1u);
  const ViewNode& i = t.node(ind[0]);
  EXPECT_EQ(i.keys, vs(q, {"A", "B"}));
  EXPECT_EQ(q.relations[i.leaf].name, "R");
  EXPECT_EQ(t.node(i.parent).at_var, q.var("C"));
}

TEST(Indicators, FourLoopWithChord) {
  Query q = Query::make(
      {{"R", {"A", "B"}}, {"S", {"B", "C"}}, {"T", {"C", "D"}}, {"U", {"D", "A"}}, {"W", {"A", "C"}}}, {});
  ViewTree t = compile(q, infer_dep(node("A", node("B", node("C", node("D")))), q));
  std::map<std::string, std::pair<VarSet, VarId>> got;
  for (int id : t.indicator_nodes()) {
    const ViewNode& n = t.node(id);
    got[q.relations[n.leaf].name] = {n.keys, t.node(n.parent).at_var};
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got["W"].first, vs(q, {"A", "C"}));
  EXPECT_EQ(got["W"].second, q.var("D"));
  EXPECT_EQ(got["R"].first, vs(q, {"A", "B"}));
  EXPECT_EQ(got["R"].second, q.var("C"));
}

TEST(Indicators, AcyclicTreesUnchanged) {
  Query q = rst();
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  EXPECT_TRUE(t.indicator_nodes().empty());
  CompileOptions off;
  off.indicators = false;
  Query tri = Query::make({{"R", {"A", "B"}}, {"S", {"B", "C"}}, {"T", {"C", "A"}}}, {});
  EXPECT_TRUE(compile(tri, infer_dep(node("A", node("B", node("C"))), tri), off).indicator_nodes().empty());
}

TEST(Materialization, DependsOnUpdatableRelations) {
  Query q = rst();
  auto order = infer_dep(rst_order(), q);
  CompileOptions only_t;
  only_t.all_updatable = false;
  only_t.updatable = {2};
  EXPECT_EQ(materialized_views(compile(q, order, only_t)),
            (std::vector<std::string>{"V@A_RST", "V@B_R", "V@E_S"}));
  CompileOptions none;
  none.all_updatable = false;
  EXPECT_EQ(materialized_views(compile(q, order, none)), (std::vector<std::string>{"V@A_RST"}));
  EXPECT_EQ(materialized_views(compile(q, order)),
            (std::vector<std::string>{"V@A_RST", "V@B_R", "V@C_ST", "V@D_T", "V@E_S"}));
  only_t.updatable = {7};
  EXPECT_THROW(compile(q, order, only_t), Error);
}

TEST(Compaction, SingleRelationChainBecomesOneView) {
  Query q = Query::make({{"R", {"A", "B", "C", "D", "E"}}}, {"A"});
  auto order = infer_dep(node("A", node("B", node("C", node("D", node("E"))))), q);
  ViewTree t = compile(q, order);
  ASSERT_EQ(t.view_nodes().size(), 1u);
  const ViewNode& v = t.node(t.root);
  EXPECT_EQ(v.keys, vs(q, {"A"}));
  EXPECT_EQ(v.marg.size(), 4u);
  EXPECT_EQ(v.marg[0].target, q.var("E"));  // innermost first
  CompileOptions raw;
  raw.compact = false;
  EXPECT_GT(compile(q, order, raw).view_nodes().size(), 1u);
}

TEST(Compaction, KeepsViewsOverSeveralRelations) {
  Query q = rst();
  EXPECT_EQ(compile(q, infer_dep(rst_order(), q)).view_nodes().size(), 5u);
}

TEST(IndexPlan, RootNeedsOnlyItsPrimaryIndex) {
  Query q = rst();
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  const ViewNode& r = t.node(t.root);
  ASSERT_EQ(r.indices.size(), 1u);
  EXPECT_EQ(r.indices[0].role, IndexRole::Primary);
  EXPECT_TRUE(view(t, "V@E_S").has_index(vs(q, {"C"})));
}

TEST(Dump, ListsEveryNode) {
  Query q = rst();
  ViewTree t = compile(q, infer_dep(rst_order(), q));
  std::string d = t.dump();
  EXPECT_EQ(std::count(d.begin(), d.end(), '\n'), static_cast<long>(t.nodes.size()));
  EXPECT_NE(d.find("V@A_RST[] := SUM[A] V@B_R[A] * V@C_ST[A]"), std::string::npos) << d;
  EXPECT_NE(d.find("  V@E_S[A,C] := SUM[E] S[A,C,E]"), std::string::npos) << d;
}

namespace {

// Structural invariants every compiled tree must satisfy.
void expect_well_formed(const ViewTree& t, const std::string& ctx) {
  ASSERT_NO_THROW(t.check()) << ctx;
  const Query& q = t.query;
  std::vector<int> seen(q.relations.size(), 0);
  for (const auto& n : t.nodes) {
    if (n.kind == ViewKind::Leaf) ++seen[n.leaf];
    if (!n.is_view()) continue;
    VarSet under;
    for (int c : n.children) under = vs_union(under, t.node(c).keys);
    EXPECT_TRUE(vs_subset(n.keys, under)) << ctx << " " << n.name;
    ASSERT_EQ(n.delta_plans.size(), n.children.size()) << ctx;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      const auto& plan = n.delta_plans[i];
      EXPECT_EQ(plan.siblings.size() + 1, n.children.size()) << ctx;
      if (!t.subtree_updatable(n.children[i])) continue;
      // siblings consulted for an updatable child are stored and indexed on the probe
      for (std::size_t j = 0; j < plan.siblings.size(); ++j) {
        const ViewNode& s = t.node(plan.siblings[j]);
        EXPECT_TRUE(s.stored()) << ctx << " " << s.name;
        const VarSet& p = plan.probe[j];
        if (!p.empty() && p != s.keys) EXPECT_TRUE(s.has_index(p)) << ctx << " " << s.name;
      }
    }
  }
  for (int c : seen) EXPECT_EQ(c, 1) << ctx;
  // the root keys are exactly the group-by variables
  if (q.free_lift_mode == FreeLiftMode::GroupBy && !t.free_connex)
    EXPECT_EQ(t.node(t.root).keys, q.free) << ctx;
  if (t.free_connex)
    for (VarId x : q.free) EXPECT_GE(t.enum_view[x], 0) << ctx;
}

}  // namespace

TEST(ViewTreeProperties, RandomQueriesCompileToWellFormedTrees) {
  Rng rng(7);
  const Shape shapes[] = {Shape::Star, Shape::Chain, Shape::Snowflake, Shape::Triangle, Shape::FourLoop};
  int free_connex = 0;
  for (int trial = 0; trial < 400; ++trial) {
    Shape sh = shapes[trial % 5];
    Query q = fivm::testing::random_query(rng, sh);
    std::string ctx = std::string(fivm::testing::shape_name(sh)) + " " + q.describe();
    for (bool free_top : {false, true}) {
      Forest f = free_top ? fallback_free_top_order(q) : fallback_order(q);
      VariableOrder o = infer_dep(f, q);
      CompileOptions opt;
      opt.compact = uniform(rng, 0, 1);
      opt.all_updatable = uniform(rng, 0, 1);
      for (std::size_t i = 0; i < q.relations.size(); ++i)
        if (uniform(rng, 0, 1)) opt.updatable.push_back(static_cast<int>(i));
      ViewTree t = compile(q, o, opt);
      free_connex += t.free_connex;
      expect_well_formed(t, ctx + " order " + forest_to_string(f) + "\n" + t.dump());
    }
  }
  EXPECT_GT(free_connex, 50);
}
