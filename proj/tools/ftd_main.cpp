// ftd: Frechet task distances from Fisher information, cell search, and the
// convergence checks, driven by flat key = value config files.
//
//   ftd <subcommand> --config <path> [--out <dir>] [--seed <n>]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "ftd/config.hpp"
#include "ftd/experiments.hpp"

namespace {

void write_error_record(const std::string& out_dir, const std::string& kind, const std::string& message) {
  try {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(std::filesystem::path(out_dir) / "error.txt");
    os << "error v1\n";
    os << "kind = " << kind << "\n";
    os << "message = " << message << "\n";
  } catch (...) {
    // the record is best-effort; the exit code carries the failure
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher-information task distances and cell search"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  long long seed_override = -1;

  for (ftd::ExperimentKind kind :
       {ftd::ExperimentKind::TrainBaseline, ftd::ExperimentKind::DistanceMatrix, ftd::ExperimentKind::Nas,
        ftd::ExperimentKind::RandomSearch, ftd::ExperimentKind::ValidateTheory}) {
    auto* sub = app.add_subcommand(ftd::kind_name(kind));
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides out_dir in the config)");
    sub->add_option("--seed", seed_override, "seed override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string subcommand = app.get_subcommands().front()->get_name();
  ftd::ExperimentConfig cfg;
  try {
    cfg = ftd::parse_config(config_path);
    if (ftd::kind_name(cfg.kind) != subcommand)
      throw ftd::ConfigError("config declares experiment = " + std::string(ftd::kind_name(cfg.kind)) +
                             " but the subcommand is " + subcommand);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    ftd::RunReport rep = ftd::run(cfg);
    std::cout << ftd::kind_name(rep.kind) << " finished in " << rep.wall_seconds << "s\n";
    for (const auto& a : rep.artifacts) std::cout << "  wrote " << a << "\n";
    for (const auto& [k, v] : rep.metrics) std::cout << "  " << k << " = " << v << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    write_error_record(cfg.out_dir, "runtime", e.what());
    return 2;
  }
}
