#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/parallel.hpp"
#include "neuraxis/run_config.hpp"
#include "neuraxis/stages.hpp"
#include "neuraxis/version.hpp"

namespace {

struct Invocation {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool force = false;
};

std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("NEURAXIS_OUT"); env && *env) return env;
  return "out";
}

int run(const std::string& command, const Invocation& inv) {
  neuraxis::set_max_threads(inv.threads);

  neuraxis::cli::RunConfig cfg;
  if (!inv.config_path.empty()) {
    cfg = neuraxis::cli::load_run_config(inv.config_path);
  } else {
    cfg.validate();
  }
  if (inv.seed_set) {
    cfg.master_seed = inv.seed;
    cfg.synth.seed = inv.seed;
  }

  const std::string out_dir = resolve_out_dir(inv.out_dir);
  std::filesystem::create_directories(out_dir);
  const neuraxis::cli::StageContext ctx{cfg, out_dir, inv.force};

  std::vector<std::string> stages;
  if (command == "pipeline")
    stages = neuraxis::cli::stage_order();
  else
    stages.push_back(command);

  nlohmann::json timings;
  for (const std::string& stage : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool ran = neuraxis::cli::run_stage(stage, ctx);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timings[stage] = {{"seconds", secs}, {"ran", ran}};
    std::cout << "[" << stage << "] " << (ran ? "done" : "up to date") << " ("
              << secs << " s)\n";
  }
  std::ofstream tf(out_dir + "/timings.json", std::ios::trunc);
  if (tf) tf << timings.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuraxis: synthetic neural recordings, latent axes, and steered generation"};
  app.set_version_flag("--version", neuraxis::kVersion);
  app.fallthrough();
  app.require_subcommand(1);

  Invocation inv;
  app.add_option("--config", inv.config_path, "run configuration file (TOML)");
  auto* seed_opt = app.add_option("--seed", inv.seed, "master seed override");
  app.add_option("--threads", inv.threads, "worker thread cap (0 = hardware)");
  app.add_option("--out", inv.out_dir, "output directory (default $NEURAXIS_OUT or ./out)");
  app.add_flag("--force", inv.force, "re-run stages even when outputs are fresh");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate recordings, word events, labels, and the corpus"},
      {"connectivity", "band-pass, phases, windowed connectivity, edge PCA"},
      {"atlas", "lagged ridge state models and word atlases"},
      {"axes", "ICA axis extraction and split-half stability"},
      {"validate", "axis-label statistics with permutation and bootstrap"},
      {"train-lm", "train the toy language model on the corpus"},
      {"adapter", "fit the hidden-state adapter and steering vectors"},
      {"steer", "run steering sweeps over prompts and strengths"},
      {"report", "effect sizes, PPL matching, and the FDR summary"},
      {"pipeline", "run every stage in order"},
  };
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  inv.seed_set = seed_opt->count() > 0;

  try {
    return run(app.get_subcommands().front()->get_name(), inv);
  } catch (const neuraxis::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == neuraxis::Error::Kind::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
