#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace neuraxis::stats {

// Neumaier-compensated summation; results do not depend on how callers
// chunk their data, which keeps parallel reductions reproducible.
double compensated_sum(std::span<const double> x);
double mean(std::span<const double> x);
// Unbiased (n-1) variance.
double variance(std::span<const double> x);
double sd(std::span<const double> x);

struct PermResult {
  double observed = 0.0;
  double p = 1.0;  // (1 + #{|t_perm| >= |t_obs|}) / (1 + n_perm); never 0
  int n_perm = 0;
  double null_mean = 0.0;
  double null_sd = 0.0;
};

struct FdrResult {
  double q = 0.0;
  std::vector<bool> rejected;
  double threshold = 0.0;  // largest rejected p; 0 when nothing is rejected
};

struct RidgeFit {
  Eigen::MatrixXd weights;    // (n_cols x n_targets), in the raw input scale
  Eigen::RowVectorXd intercept;  // (n_targets)
};

// Minimizes ||Y - X W - b||^2 + alpha ||W||^2 with an unpenalized intercept.
// With standardize, columns of X are z-scored internally and the returned
// weights are mapped back to the raw scale. alpha = 0 requires full column
// rank and fails explicitly otherwise.
RidgeFit ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha,
                     bool standardize = false);

// (mean(a) - mean(b)) / pooled SD.
double cohen_d(std::span<const double> a, std::span<const double> b);

enum class TwoSampleStat { mean_diff, d };

PermResult perm_test(std::span<const double> a, std::span<const double> b,
                     TwoSampleStat stat, int n_perm, std::uint64_t seed);

// Welch's t-test; p-value from the regularized incomplete beta function.
// Reported alongside permutation p, which stays authoritative.
struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

enum class PairedStat { r, d };

struct BootstrapCi {
  double low = 0.0;
  double high = 0.0;
  int redraws = 0;       // degenerate resamples redrawn
  bool degenerate = false;  // the observed statistic itself is degenerate
};

// Percentile CI from n_boot resamples. stat r resamples (x, y) pairs; stat d
// resamples the two groups x and y independently.
BootstrapCi bootstrap_ci(std::span<const double> x, std::span<const double> y, PairedStat stat,
                         int n_boot, double level, std::uint64_t seed);

// Benjamini-Hochberg step-up at level q.
FdrResult bh_fdr(std::span<const double> pvals, double q);

double pearson_r(std::span<const double> x, std::span<const double> y);

// With confounds: residualize x and y on them (OLS with intercept) and
// correlate the residuals. Without confounds this is plain Pearson r.
double pearson_partial(std::span<const double> x, std::span<const double> y,
                       const Eigen::MatrixXd& confounds);
double pearson_partial(std::span<const double> x, std::span<const double> y);

double spearman_rho(std::span<const double> x, std::span<const double> y);

// Residuals of y after OLS regression on X (intercept included).
Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::MatrixXd& X);

// Regularized incomplete beta I_x(a, b); exposed for test oracles.
double incomplete_beta(double a, double b, double x);

}  // namespace neuraxis::stats
