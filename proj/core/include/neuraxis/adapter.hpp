#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "neuraxis/model.hpp"
#include "neuraxis/synth.hpp"

namespace neuraxis::adapter {

// Per-word-type mean hidden state at one residual-stream index (last-token
// pooling; every word is a single token here, so the occurrence state is the
// state at the word's position).
struct HiddenTable {
  std::vector<int> word_ids;  // ascending, aligned with rows of hidden
  Eigen::MatrixXd hidden;     // n_words x d_model
  std::vector<int> counts;    // pooled occurrence count per word
  int layer = 0;
  int dropped_words = 0;  // requested words with no usable occurrence

  int rows() const { return static_cast<int>(word_ids.size()); }
};

// States of `layer` (0 = embedding output, k = after block k) are pooled per
// word type over all corpus occurrences, restricted to word_ids; requested
// words absent from the corpus are dropped and tallied.
HiddenTable collect_word_hidden(const model::ModelWeights& w, const synth::Corpus& corpus,
                                int layer, const std::vector<int>& word_ids);

// Linear map from hidden states to axis scores: predict(h) = W z(h) + b where
// z standardizes with the stored feature mean/sd.
struct Adapter {
  int layer = 0;
  Eigen::MatrixXd W;         // n_axes x d_model, standardized feature space
  Eigen::VectorXd b;         // n_axes
  double alpha = 0.0;
  Eigen::VectorXd feat_mean;  // d_model
  Eigen::VectorXd feat_sd;    // d_model; 1 where the feature is constant
  std::vector<double> holdout_r;   // per-axis Pearson r on held-out words
  std::vector<int> holdout_word_ids;

  int n_axes() const { return static_cast<int>(W.rows()); }
  Eigen::VectorXd predict(const Eigen::VectorXd& h) const;
  // One row per input row.
  Eigen::MatrixXd predict_rows(const Eigen::MatrixXd& h) const;
};

// Standardized ridge per axis with a shared alpha chosen by k-fold CV on the
// training split; the holdout split is by word type. Requires >= 100 rows
// and a training split that admits at least 2 folds.
Adapter fit_adapter(const HiddenTable& table, const Eigen::MatrixXd& axis_scores,
                    const std::vector<double>& alphas, double holdout_frac, std::uint64_t seed);

struct SteeringVector {
  Eigen::VectorXd direction;  // unit norm
  std::string provenance;     // brain_axis(k) | actadd | random(seed) | text_probe(label)
  int layer = 0;
};

// Row k of W mapped back to raw hidden space (divide by feature sd), then
// unit-normalized.
SteeringVector brain_axis_vector(const Adapter& a, int k);

// Unit-normalized difference between the mean hidden state of the n_top
// highest-label words and the n_top lowest; ties break on word_id.
SteeringVector actadd_vector(const HiddenTable& table, const std::vector<double>& labels,
                             int n_top = 50);

// Isotropic Gaussian draw, unit-normalized.
SteeringVector random_vector(int d_model, std::uint64_t seed, int layer = 0);

// Same pipeline as brain_axis with a single text label as the target.
SteeringVector text_probe_vector(const HiddenTable& table, const std::vector<double>& labels,
                                 const std::string& label_name, const std::vector<double>& alphas,
                                 double holdout_frac, std::uint64_t seed);

inline const std::vector<double>& default_adapter_alphas() {
  static const std::vector<double> k = {1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4};
  return k;
}

// path.naxt holds the matrices; path.json holds layer/alpha/fit report.
void save_adapter(const std::string& path_base, const Adapter& a);
Adapter load_adapter(const std::string& path_base);

void save_vector_json(const std::string& path, const SteeringVector& v);
SteeringVector load_vector_json(const std::string& path);

}  // namespace neuraxis::adapter
