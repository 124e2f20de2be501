#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fivm/harness.hpp"

namespace fs = std::filesystem;
using namespace fivm;

namespace {

// A path may name a scenario file or a directory of them.
std::vector<Scenario> load_all(const std::vector<std::string>& paths) {
  std::vector<Scenario> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(load_scenario(f.string()));
    } else {
      out.push_back(load_scenario(p));
    }
  }
  if (out.empty()) throw Error("no scenarios found");
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

void setup_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("fivm"));
  spdlog::set_level(spdlog::level::warn);
  if (const char* lv = std::getenv("FIVM_LOG")) {
    auto level = spdlog::level::from_str(lv);
    if (level == spdlog::level::off && std::string(lv) != "off") {
      spdlog::warn("FIVM_LOG='{}' is not a log level; keeping warn", lv);
    } else {
      spdlog::set_level(level);
    }
  }
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Factorized higher-order incremental view maintenance"};
  app.require_subcommand(1);

  std::vector<std::string> scenarios;
  std::string engine = "fivm", metrics, export_path;
  int threads = 0;
  RunOptions opt;
  auto add_stream_flags = [&](CLI::App* c) {
    c->add_option("--batch-size", opt.batch_size, "Tuples per update batch")->check(CLI::PositiveNumber);
    c->add_option("--seed", opt.seed, "Shuffle seed for the stream (0 keeps file order)");
    c->add_option("--intvl", opt.intvl, "Enumerate after every N batches (0 = never)")->check(CLI::NonNegativeNumber);
  };

  auto* compile_cmd = app.add_subcommand("compile", "Print the view tree and its materialization plan");
  compile_cmd->add_option("--scenario", scenarios, "Scenario file or directory")->required();

  auto* run_cmd = app.add_subcommand("run", "Stream a scenario through an engine and record metrics");
  run_cmd->add_option("--scenario", scenarios, "Scenario file or directory")->required();
  run_cmd->add_option("--engine", engine, "fivm, first_order, reevaluate or all");
  run_cmd->add_option("--metrics", metrics, "Metrics CSV path (default: the scenario's)");
  run_cmd->add_option("--export", export_path, "Write the application output (or the result) here");
  run_cmd->add_option("--threads", threads, "Worker threads (default: hardware)");
  add_stream_flags(run_cmd);

  auto* enum_cmd = app.add_subcommand("enumerate", "Load every relation at once and export the result listing");
  enum_cmd->add_option("--scenario", scenarios, "Scenario file")->required();
  enum_cmd->add_option("--export", export_path, "Listing CSV path (default: stdout)");

  auto* verify_cmd = app.add_subcommand("verify", "Check that all engines agree after every batch");
  verify_cmd->add_option("--scenario", scenarios, "Scenario file or directory")->required();
  add_stream_flags(verify_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    auto all = load_all(scenarios);
    if (*compile_cmd) {
      for (const auto& s : all) {
        auto pq = prepare_query(s);
        auto tree = compile_scenario(s, pq);
        std::cout << "# " << s.name << "\n"
                  << pq.query.describe() << "\n"
                  << "class: " << classify(pq.query).describe() << "\n"
                  << "order: " << forest_to_string(pq.order) << "\n"
                  << "tree: " << (tree.free_connex ? "free-connex" : "plain") << "\n"
                  << tree.dump() << "\n";
      }
      return 0;
    }
    if (*run_cmd) {
      std::vector<std::string> engines;
      if (engine == "all") engines = kEngines;
      else engines = {engine};
      std::vector<std::pair<const Scenario*, std::string>> jobs;
      for (const auto& s : all)
        for (const auto& e : engines) jobs.push_back({&s, e});
      auto reports = run_parallel(jobs, opt, threads);
      for (const auto& r : reports) {
        spdlog::info("{} / {}: {} batches{}", r.scenario, r.engine, r.rows.size(), r.timed_out ? " (timed out)" : "");
        if (!r.app_note.empty()) spdlog::debug("{}", r.app_note);
      }
      std::string mpath = metrics;
      if (mpath.empty() && all.size() == 1 && !all[0].metrics.empty())
        mpath = (fs::path(all[0].base_dir) / all[0].metrics).string();
      if (mpath.empty()) write_metrics(std::cout, reports);
      else write_metrics_file(mpath, reports);
      if (!export_path.empty()) {
        if (reports.size() == 1) {
          const auto& r = reports[0];
          write_file(export_path, r.app_csv.empty() ? r.result_csv : r.app_csv);
        } else {
          fs::create_directories(export_path);
          for (const auto& r : reports)
            write_file((fs::path(export_path) / (r.scenario + "." + r.engine + ".csv")).string(),
                       r.app_csv.empty() ? r.result_csv : r.app_csv);
        }
      }
      return 0;
    }
    if (*enum_cmd) {
      if (all.size() != 1) throw Error("enumerate takes one scenario");
      auto text = enumerate_scenario(all[0]);
      if (export_path.empty()) std::cout << text;
      else write_file(export_path, text);
      return 0;
    }
    if (*verify_cmd) {
      bool ok = true;
      for (const auto& s : all) {
        auto r = verify_scenario(s, opt);
        std::cout << (r.ok ? "ok    " : "FAIL  ") << r.message << "\n";
        ok = ok && r.ok;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
