#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neuraxis/adapter.hpp"
#include "neuraxis/atlas.hpp"
#include "neuraxis/synth.hpp"

namespace neuraxis::cli {

// Full run configuration. Every field has a default, so an empty file is a
// valid config; unknown keys are rejected at parse time.
struct RunConfig {
  std::uint64_t master_seed = 1;

  synth::SynthSpec synth;

  struct SignalCfg {
    std::string method = "plv";  // plv | wpli
    double window_s = 2.0;
    double step_s = 0.5;
    int taps = 0;  // 0 = filter default
    double edge_trim_s = 1.0;
    int n_components = 10;
  } signal;

  struct AtlasCfg {
    std::vector<double> lags = ::neuraxis::atlas::kDefaultLags;
    std::vector<double> alphas = ::neuraxis::atlas::kDefaultAlphaGrid;
    int n_folds = 5;
  } atlas;

  struct AxesCfg {
    int n_axes = 3;
    int n_perm = 1000;
    int n_boot = 1000;
  } axes;

  struct ModelCfg {
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 256;
    int context_len = 128;
    int vocab_size = 512;  // must exceed synth vocab + BOS
    int batch_size = 16;
    int n_steps = 1500;
    double lr = 3e-3;
    int warmup_steps = 50;
    double grad_clip = 1.0;
    double val_frac = 0.1;
    int eval_every = 200;
    int n_sequences = 1200;
    int seq_len = 64;
  } model;

  struct AdapterCfg {
    int layer = 2;
    double holdout_frac = 0.3;
    int n_top = 50;
    std::string probe_label = "logfreq";  // logfreq | emb_change | concreteness
    std::vector<double> alphas = ::neuraxis::adapter::default_adapter_alphas();
  } adapter;

  struct SweepCfg {
    std::vector<double> strengths = {-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0};
    int n_prompts = 50;
    int samples_per_strength = 4;
    int gen_tokens = 256;
    double temperature = 1.0;
    int prompt_len = 16;
    int axis = 0;  // adapter axis steered by the brain_axis vector
    std::vector<std::string> vectors = {"brain_axis", "actadd", "random", "text_probe"};
  } sweep;

  // Cross-field checks; throws Error(config).
  void validate() const;
  // Deterministic serialization of every effective field.
  std::string canonical() const;
  // FNV-1a over canonical().
  std::uint64_t hash() const;
};

// Parses the TOML subset used by config files: [section] headers and
// key = value lines where value is a string, bool, number, or a flat array.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace neuraxis::cli
