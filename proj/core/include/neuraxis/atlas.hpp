#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neuraxis/synth.hpp"

namespace neuraxis::atlas {

inline const std::vector<double> kDefaultLags{0.0, 0.5, 1.0};
inline const std::vector<double> kDefaultAlphaGrid = [] {
  std::vector<double> g;
  for (int i = 0; i < 13; ++i) g.push_back(std::pow(10.0, -2.0 + 0.5 * i));
  return g;
}();

struct DesignMatrix {
  Eigen::MatrixXd X;        // standardized columns; missing-lag cells are 0
  Eigen::MatrixXd raw;      // pre-standardization values (missing cells = column mean)
  std::vector<std::string> column_names;  // feature@lag
  std::vector<double> lags_s;
  Eigen::VectorXd col_means;
  Eigen::VectorXd col_sds;  // 1 where a column was constant
  std::vector<double> window_times;
  std::int64_t missing_cells = 0;  // window x lag blocks with no word at that lag

  Eigen::Index n_rows() const { return X.rows(); }
  Eigen::Index n_cols() const { return X.cols(); }
};

struct StateModel {
  Eigen::MatrixXd weights;    // n_cols x state_dim, in standardized design space
  Eigen::VectorXd intercept;  // state_dim
  double alpha = 0.0;
  std::vector<std::pair<double, double>> cv_table;  // alpha -> mean held-out R^2
  Eigen::VectorXd col_means;
  Eigen::VectorXd col_sds;
  std::vector<int> fold_of_run;

  // Slopes/intercept in raw feature units.
  Eigen::MatrixXd destandardized_weights() const;
  Eigen::VectorXd raw_intercept() const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& raw_design) const;
};

struct WordAtlas {
  std::vector<int> word_ids;  // ascending
  Eigen::MatrixXd atlas;      // n_word_types x state_dim
  std::vector<int> counts;
  std::string provenance;
  std::int64_t dropped_windows = 0;

  int row_of(int word_id) const;
};

// Raw per-window features of the most recent word at or before t - lag for
// each lag; standardization uses this design's own rows. For pooled fits,
// fit_state_model restandardizes across runs.
DesignMatrix build_design(const std::vector<synth::WordEvent>& events,
                          const std::vector<double>& window_times,
                          const std::vector<double>& lags = kDefaultLags);

// Run-fold cross-validated ridge. designs/states are per-run and aligned.
// Returns the refit-on-all-data model plus one OOF prediction matrix per run.
std::pair<StateModel, std::vector<Eigen::MatrixXd>> fit_state_model(
    const std::vector<DesignMatrix>& designs, const std::vector<Eigen::MatrixXd>& states,
    const std::vector<double>& alphas = kDefaultAlphaGrid, int n_folds = 5);

WordAtlas build_word_atlas(const std::vector<Eigen::MatrixXd>& preds,
                           const std::vector<std::vector<synth::WordEvent>>& events,
                           const std::vector<std::vector<double>>& window_times,
                           const std::string& provenance);

WordAtlas average_atlases(const std::vector<WordAtlas>& atlases);

void save_atlas(const std::string& path_prefix, const WordAtlas& atlas);
WordAtlas load_atlas(const std::string& path_prefix);
void save_atlas_summary_csv(const std::string& path, const WordAtlas& atlas);

}  // namespace neuraxis::atlas
