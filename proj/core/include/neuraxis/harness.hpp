#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "neuraxis/adapter.hpp"
#include "neuraxis/model.hpp"
#include "neuraxis/synth.hpp"

namespace neuraxis::harness {

struct SweepSpec {
  std::vector<double> strengths = {-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0};
  int n_prompts = 50;
  int samples_per_strength = 4;
  int gen_tokens = 256;
  int layer = 0;
  adapter::SteeringVector vector;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  // Requires 0 in strengths (baseline anchor) and n_prompts >= 2.
  void validate() const;
};

struct GenerationRecord {
  int prompt_id = 0;
  double strength = 0.0;
  int sample_id = 0;
  std::vector<int> tokens;         // generated continuation only
  Eigen::VectorXd adapter_scores;  // frozen-model hidden states, mean-pooled
  double ppl = 0.0;                // continuation PPL under the frozen model
  double logfreq_mean = 0.0;
  double function_ratio = 0.0;
  double animate_rate = 0.0;
  double noun_ratio = 0.0;
};

struct SweepResult {
  std::vector<GenerationRecord> records;
  int invalid_records = 0;  // cells dropped (generation failed or no labeled tokens)
};

// One steered generation per (prompt, strength, sample) cell with a derived
// seed; adapter scores, perplexity, and text metrics all come from the
// frozen (unsteered) model over the generated continuation.
SweepResult run_sweep(const model::ModelWeights& w, const adapter::Adapter& ad,
                      const synth::LabelTables& labels,
                      const std::vector<std::vector<int>>& prompts, const SweepSpec& spec);

enum class TargetKind { adapter_axis, text_metric };

struct EffectTarget {
  TargetKind kind = TargetKind::adapter_axis;
  int axis = 0;        // adapter_axis
  std::string metric;  // logfreq_mean | function_ratio | animate_rate | noun_ratio

  std::string name() const;
};

struct EffectReport {
  std::string target;
  double d = 0.0;           // pos-strength vs neg-strength groups
  double perm_p = 1.0;      // prompt-block sign permutation
  double strength_r = 0.0;  // Pearson r of (strength, value) over all records
  double ppl_d = 0.0;
  double ppl_perm_p = 1.0;
  int n_pos = 0;
  int n_neg = 0;
  double match_rate = 1.0;  // ppl_match only; 1 otherwise
  bool flagged = false;     // ppl_match: matching judged unreliable
};

// Cohen's d of pos vs neg strengths (0 excluded); permutation p from sign
// shuffles within prompt blocks; strength_r includes the baseline records.
EffectReport evaluate(const std::vector<GenerationRecord>& records, const EffectTarget& target,
                      int n_perm = 1000, std::uint64_t seed = 1);

// Greedy 1:1 nearest-neighbor match of pos to neg records on perplexity
// (caliper 0.2 x pooled PPL SD), effect recomputed on the matched sets.
// Requires >= 10 records per group; match rate < 50% flags the report.
EffectReport ppl_match(const std::vector<GenerationRecord>& records, const EffectTarget& target,
                       int n_perm = 1000, std::uint64_t seed = 1);

struct LabeledReport {
  std::string model;
  int layer = 0;
  EffectReport report;
};

struct FdrRow {
  std::string model;
  std::string axis;
  int layer = 0;
  double d = 0.0;
  double perm_p = 1.0;
  bool significant = false;
};

struct FdrSummary {
  std::vector<FdrRow> rows;
  double q = 0.0;
  double threshold = 0.0;
};

// BH-FDR over all perm_p in the grid.
FdrSummary fdr_summary(const std::vector<LabeledReport>& reports, double q = 0.05);

void save_sweep_csv(const std::string& path, const SweepResult& result);
void save_sweep_tokens(const std::string& path, const SweepResult& result);
SweepResult load_sweep_csv(const std::string& records_path, const std::string& tokens_path);
void save_effects_csv(const std::string& path, const std::vector<LabeledReport>& reports);
void save_fdr_csv(const std::string& path, const FdrSummary& summary);
// Per-strength means with normal-approximation CIs for each adapter axis and
// text metric.
void save_plot_json(const std::string& path, const SweepResult& result);

}  // namespace neuraxis::harness
