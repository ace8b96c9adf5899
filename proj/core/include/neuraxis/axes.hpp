#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "neuraxis/atlas.hpp"

namespace neuraxis::axes {

struct AxisBasis {
  Eigen::MatrixXd unmixing;    // n_axes x state_dim; includes whitening
  Eigen::MatrixXd mixing;      // state_dim x n_axes; unmixing * mixing = I
  Eigen::VectorXd state_mean;  // centering applied before unmixing
  int n_axes = 0;
  Eigen::MatrixXd word_scores;  // n_words x n_axes, unit variance per axis
  std::vector<int> word_ids;
  bool converged = false;
  int iterations = 0;
  double tolerance = 0.0;
  std::uint64_t seed = 0;

  // (rows - state_mean) * unmixing^T for any matrix in the atlas state space.
  Eigen::MatrixXd project(const Eigen::MatrixXd& atlas_rows) const;
};

// FastICA on the whitened leading principal subspace: symmetric decorrelation,
// tanh contrast, tolerance 1e-6, up to 1000 iterations and 5 seeded restarts.
// Non-convergence is reported through converged=false on the best iterate.
AxisBasis fit_ica(const atlas::WordAtlas& atlas, int n_axes, std::uint64_t seed);

struct AxisMatching {
  struct Pair {
    int axis_a = 0;
    int axis_b = 0;
    double r = 0.0;  // signed correlation of the matched pair
  };
  std::vector<Pair> pairs;  // one per axis of the smaller side, sorted by axis_a
  double mean_abs_r = 0.0;
};

// Optimal one-to-one assignment maximizing the summed |r| of word-score
// correlations between the two score sets (rows = shared words).
AxisMatching match_axes(const Eigen::MatrixXd& scores_a, const Eigen::MatrixXd& scores_b);

// Minimum-cost assignment of rows to columns; returns per-row column index.
// Requires rows <= cols. Exposed for verification against brute force.
std::vector<int> hungarian_min_assignment(const Eigen::MatrixXd& cost);

enum class LabelMode { continuous, binary };

struct ValidationReport {
  int axis = 0;
  std::string label;
  std::string stat;  // r | d | residual_d | matched_d
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double perm_p = 1.0;
  std::int64_t n = 0;
};

// Continuous labels yield one "r" report; binary labels yield "d",
// "residual_d" (OLS residuals on confounds), and "matched_d" (greedy 1:1
// caliper matching on standardized confounds, caliper 0.2). Confounds may be
// empty (0 columns), in which case residual_d and matched_d reduce to d.
std::vector<ValidationReport> validate_axis(const Eigen::VectorXd& scores,
                                            const Eigen::VectorXd& labels,
                                            const Eigen::MatrixXd& confounds, LabelMode mode,
                                            int n_perm, int n_boot, std::uint64_t seed,
                                            int axis_index, const std::string& label_name);

void save_axis_basis(const std::string& path_prefix, const AxisBasis& basis);
AxisBasis load_axis_basis(const std::string& path_prefix);

// Columns: axis,label,stat,estimate,ci_low,ci_high,perm_p,n
void save_validation_csv(const std::string& path, const std::vector<ValidationReport>& reports);

}  // namespace neuraxis::axes
