// dpmix_cli: run experiments, summarize results, and inspect privacy
// calibration and topologies.
//
// Log verbosity: DPMIX_LOG_LEVEL=trace|debug|info|warn|error|off (default info).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dpmix/experiment.hpp"
#include "dpmix/privacy.hpp"
#include "dpmix/topology.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("dpmix");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("DPMIX_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(lvl);
    // from_str maps unknown names to off; only accept it when asked for.
    if (level != spdlog::level::off || std::string(lvl) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring unknown DPMIX_LOG_LEVEL '{}'", lvl);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Differentially private decentralized min-max optimization experiments"};
  app.require_subcommand(1);

  std::string config_path, output_override;
  std::size_t jobs_override = 0, threads_override = 0;
  auto* run = app.add_subcommand("run", "Run an experiment config (or a manifest)");
  run->add_option("config", config_path, "Config or manifest JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--output", output_override, "Override the output directory");
  run->add_option("--jobs", jobs_override, "Override the number of concurrent runs");
  run->add_option("--threads", threads_override, "Override threads per run");

  std::vector<std::string> csv_files;
  std::string summary_out;
  auto* summ = app.add_subcommand("summarize", "Final-epoch AUROC per method and sweep point");
  summ->add_option("files", csv_files, "results.csv files")->required()->check(CLI::ExistingFile);
  summ->add_option("--csv", summary_out, "Also write the summary as CSV to this path");

  dpmix::PrivacyBudget budget;
  std::size_t T = 1, m = 1;
  auto* cal = app.add_subcommand("calibrate", "Print the calibrated noise scale sigma");
  cal->add_option("--theta", budget.theta, "Privacy parameter theta")->required();
  cal->add_option("--gamma", budget.gamma, "Privacy parameter gamma")->required();
  cal->add_option("--T", T, "Number of iterations")->required();
  cal->add_option("--m", m, "Number of agents")->required();
  cal->add_option("--Lg", budget.L_g, "Gradient norm bound")->required();
  cal->add_option("--c", budget.c, "Calibration constant")->capture_default_str();

  std::size_t topo_m = 0;
  double topo_p = 0.5;
  std::uint64_t topo_seed = 0;
  auto* topo = app.add_subcommand("topology", "Print an Erdos-Renyi edge list and its spectral gap");
  topo->add_option("--m", topo_m, "Number of agents")->required();
  topo->add_option("--p", topo_p, "Edge probability")->required();
  topo->add_option("--seed", topo_seed, "Graph seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      dpmix::ExperimentConfig cfg = dpmix::load_config(config_path);
      if (!output_override.empty()) cfg.output = output_override;
      if (jobs_override) cfg.jobs = jobs_override;
      if (threads_override) cfg.threads = threads_override;
      const auto res = dpmix::run_experiment(cfg);
      std::cout << "wrote " << res.rows.size() << " rows to " << res.csv_path.string() << "\n"
                << "manifest: " << res.manifest_path.string() << "\n";
    } else if (*summ) {
      std::vector<std::filesystem::path> paths(csv_files.begin(), csv_files.end());
      const auto rows = dpmix::summarize(paths);
      std::cout << dpmix::summary_table(rows);
      if (!summary_out.empty()) {
        std::ofstream out(summary_out, std::ios::binary);
        out << dpmix::summary_csv(rows);
        if (!out) throw std::runtime_error("cannot write " + summary_out);
      }
    } else if (*cal) {
      const auto s = dpmix::calibrate_sigma(budget, T, m);
      std::cout << dpmix::format_double(s.sigma_x) << "\n";
    } else if (*topo) {
      const dpmix::Graph g = dpmix::gen_erdos_renyi(topo_m, topo_p, topo_seed);
      dpmix::write_edge_list(std::cout, g);
      const auto w = dpmix::metropolis_weights(g);
      std::cout << "# lambda " << dpmix::format_double(w.lambda) << "\n";
      if (g.repaired) {
        std::cout << "# repaired " << g.repair_edges_added << " ring edges\n";
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
