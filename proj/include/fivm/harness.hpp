#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fivm/apps.hpp"
#include "fivm/query.hpp"
#include "fivm/viewtree.hpp"

namespace fivm {

struct RelationDecl {
  std::string name;
  std::vector<std::string> columns;  // variables
  std::vector<std::string> fields;   // matching CSV header names (default: the variable names)
  std::string file;                  // CSV path, relative to the scenario file
  std::string payload_column;        // optional numeric column turned into the payload
  std::optional<bool> updatable;     // default: the scenario's updatable list, else all
};

struct AppConfig {
  std::string kind = "none";  // none | covariance | regression | mutual_information | chow_liu
  std::string label;
  std::vector<std::string> features;  // regression: feature variables (default: every slot but the label)
  double step = 0;                    // 0 = safe_step_size
  double threshold = 1e-9;
  int max_iterations = 100000;
  bool warm_start = true;
};

struct Scenario {
  std::string name;
  std::string base_dir;  // directory of the scenario file
  std::vector<RelationDecl> relations;
  std::map<std::string, ValueKind> var_kinds;
  std::vector<std::string> free;
  RingSpec ring;
  std::vector<Feature> features;  // non-empty: covariance query, ring derived from the kinds
  std::vector<std::tuple<std::string, LiftMode, int>> lifts;
  FreeLiftMode payload_mode = FreeLiftMode::GroupBy;
  std::optional<Forest> order;
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> fds;
  TreeShape shape = TreeShape::Auto;
  std::vector<std::string> updatable;  // relation names; empty = all
  int batch_size = 1000;
  std::uint64_t seed = 0;  // 0 keeps file order
  int intvl = 0;           // enumerate after every intvl batches; 0 = never
  bool sorted = false;     // stream tuples sorted along the variable order
  double timeout_s = 0;    // 0 = none
  AppConfig app;
  std::string metrics;  // default metrics path

  void validate() const;
};

Scenario parse_scenario(const std::string& json_text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

/// Query, covariance slots (when features are declared) and variable order of a scenario.
struct PreparedQuery {
  Query query;
  std::optional<CovarianceQuery> cov;
  Forest order;
};
PreparedQuery prepare_query(const Scenario& s);
ViewTree compile_scenario(const Scenario& s, const PreparedQuery& pq);

/// Maps categorical strings to ids in order of first appearance.
class Dictionary {
 public:
  Value encode(const std::string& s);
  const std::string& decode(Value v) const;

 private:
  std::map<std::string, Value> ids_;
  std::vector<std::string> names_;
};

Value parse_value(const std::string& text, ValueKind kind, Dictionary& dict);
std::string render_value(Value v, ValueKind kind, const Dictionary& dict);

/// One parsed CSV data row: key over the declared columns plus a weight
/// (payload column or 1, times the sign column if present).
struct DataRow {
  Tuple key;
  double weight = 1;
};

/// Header must name every declared column (plus optional payload and sign
/// columns). Errors carry the file name and line number.
std::vector<DataRow> read_relation_csv(const std::string& path, const RelationDecl& decl, const Query& q,
                                       Dictionary& dict);

/// Rows turned into a relation; duplicate keys accumulate.
template <class R>
Relation<R> to_relation(const std::vector<DataRow>& rows, const std::vector<VarId>& schema, const R& ring) {
  Relation<R> r(ring, schema);
  for (const auto& row : rows) r.add(row.key, row.weight == 1 ? ring.one() : ring.from_double(row.weight));
  return r;
}

template <class R>
Relation<R> load_relation_csv(const std::string& path, const RelationDecl& decl, const Query& q, const R& ring,
                              Dictionary& dict) {
  std::vector<VarId> schema;
  for (const auto& c : decl.columns) schema.push_back(q.var(c));
  return to_relation(read_relation_csv(path, decl, q, dict), schema, ring);
}

struct StreamEvent {
  int relation = -1;  // index into the scenario's relation list
  int sign = 1;
  Tuple key;
  double weight = 1;  // payload magnitude
};
using Batch = std::vector<StreamEvent>;

/// Round-robin over the relations, one tuple at a time, chunked into batches.
/// A non-zero seed shuffles each relation's rows first.
std::vector<Batch> synthesize_stream(const std::vector<std::vector<DataRow>>& relations, int batch_size,
                                     std::uint64_t seed);

struct MetricsRow {
  std::string scenario;
  std::string engine;
  int batch = 0;
  std::uint64_t tuples = 0;  // cumulative
  std::uint64_t reads = 0, writes = 0, probes = 0;
  std::uint64_t elapsed_ns = 0;
  std::uint64_t enumerated = 0;
};

struct RunReport {
  std::string scenario;
  std::string engine;
  std::vector<MetricsRow> rows;
  bool timed_out = false;
  std::string result_csv;  // final result listing
  std::string app_csv;     // post-processor output of the last batch
  std::string app_note;    // e.g. regression iterations per batch
};

struct RunOptions {
  std::optional<int> batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<int> intvl;
};

extern const std::vector<std::string> kEngines;  // fivm, first_order, reevaluate

RunReport run_scenario(const Scenario& s, const std::string& engine, const RunOptions& opt = {});

/// Runs the engines in lock-step and compares their results after every
/// batch (and their listings at enumeration checkpoints).
struct VerifyReport {
  bool ok = true;
  int batches = 0;
  std::string message;
};
VerifyReport verify_scenario(const Scenario& s, const RunOptions& opt = {});

/// All updatable data loaded at once; listing of the result as CSV.
std::string enumerate_scenario(const Scenario& s);

extern const char* const kMetricsHeader;
void write_metrics(std::ostream& os, const std::vector<RunReport>& reports);
void write_metrics_file(const std::string& path, const std::vector<RunReport>& reports);

/// Runs several (scenario, engine) jobs on worker threads; reports come back in job order.
std::vector<RunReport> run_parallel(const std::vector<std::pair<const Scenario*, std::string>>& jobs,
                                    const RunOptions& opt = {}, int threads = 0);

}  // namespace fivm
