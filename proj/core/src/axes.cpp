#include "neuraxis/axes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/parallel.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/table.hpp"
#include "neuraxis/tensor_archive.hpp"

namespace neuraxis::axes {

namespace {

constexpr double kIcaTol = 1e-6;
constexpr int kIcaMaxIter = 1000;
constexpr int kIcaRestarts = 5;
constexpr double kCaliper = 0.2;
constexpr double kCiLevel = 0.95;

double skewness(const Eigen::VectorXd& x) {
  const double m = x.mean();
  const double n = static_cast<double>(x.size());
  const double var = (x.array() - m).square().sum() / (n - 1.0);
  if (var <= 0.0) return 0.0;
  const double m3 = (x.array() - m).cube().sum() / n;
  return m3 / std::pow(var, 1.5);
}

Eigen::MatrixXd random_orthonormal(int k, Rng& rng) {
  Eigen::MatrixXd g(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) g(i, j) = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so the result does not depend on QR sign conventions.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < k; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q.transpose();
}

struct IcaState {
  Eigen::MatrixXd W;
  double delta = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

IcaState run_fastica(const Eigen::MatrixXd& Z, std::uint64_t restart_seed) {
  const int k = static_cast<int>(Z.cols());
  const double n = static_cast<double>(Z.rows());
  Rng rng(restart_seed);

  IcaState st;
  st.W = random_orthonormal(k, rng);
  for (int it = 1; it <= kIcaMaxIter; ++it) {
    const Eigen::MatrixXd S = Z * st.W.transpose();
    const Eigen::MatrixXd G = S.array().tanh().matrix();
    const Eigen::VectorXd gprime_mean =
        (1.0 - G.array().square()).matrix().colwise().mean().transpose();
    Eigen::MatrixXd Wn = (G.transpose() * Z) / n - gprime_mean.asDiagonal() * st.W;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Wn * Wn.transpose());
    if (es.eigenvalues().minCoeff() <= 1e-12) {
      st.delta = std::numeric_limits<double>::infinity();
      break;  // degenerate update; restart with a new seed
    }
    Wn = es.operatorInverseSqrt() * Wn;

    double delta = 0.0;
    for (int i = 0; i < k; ++i)
      delta = std::max(delta, 1.0 - std::abs(Wn.row(i).dot(st.W.row(i))));
    st.W = Wn;
    st.delta = delta;
    st.iterations = it;
    if (delta < kIcaTol) {
      st.converged = true;
      break;
    }
  }
  return st;
}

// RMS distance across standardized confound columns; 0 when no confounds.
double confound_distance(const Eigen::MatrixXd& zc, Eigen::Index a, Eigen::Index b) {
  if (zc.cols() == 0) return 0.0;
  return std::sqrt((zc.row(a) - zc.row(b)).squaredNorm() / static_cast<double>(zc.cols()));
}

// Greedy 1:1 nearest-neighbor caliper matching; treated indices claim the
// nearest unused control in ascending index order.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> caliper_match(
    const Eigen::MatrixXd& zc, const std::vector<Eigen::Index>& treated,
    const std::vector<Eigen::Index>& control) {
  std::vector<bool> used(control.size(), false);
  std::vector<Eigen::Index> mt, mc;
  for (const Eigen::Index t : treated) {
    double best = std::numeric_limits<double>::infinity();
    std::ptrdiff_t best_j = -1;
    for (std::size_t j = 0; j < control.size(); ++j) {
      if (used[j]) continue;
      const double dist = confound_distance(zc, t, control[j]);
      if (dist < best) {
        best = dist;
        best_j = static_cast<std::ptrdiff_t>(j);
      }
    }
    if (best_j >= 0 && best <= kCaliper) {
      used[static_cast<std::size_t>(best_j)] = true;
      mt.push_back(t);
      mc.push_back(control[static_cast<std::size_t>(best_j)]);
    }
  }
  return {std::move(mt), std::move(mc)};
}

double matched_d_stat(const Eigen::VectorXd& scores, const Eigen::MatrixXd& zc,
                      const std::vector<Eigen::Index>& treated,
                      const std::vector<Eigen::Index>& control, std::size_t* n_matched) {
  const auto [mt, mc] = caliper_match(zc, treated, control);
  if (n_matched) *n_matched = mt.size();
  if (mt.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> a, b;
  for (const auto i : mt) a.push_back(scores(i));
  for (const auto i : mc) b.push_back(scores(i));
  return stats::cohen_d(a, b);
}

// Two-sided add-one permutation p for a statistic of shuffled labels.
template <typename StatFn>
stats::PermResult label_perm_p(double observed, int n_perm, std::uint64_t seed, StatFn stat) {
  require(n_perm >= 1, "n_perm must be >= 1");
  std::vector<double> null_stats(static_cast<std::size_t>(n_perm));
  parallel_for(n_perm, [&](std::int64_t k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    null_stats[static_cast<std::size_t>(k)] = stat(rng);
  });
  std::int64_t exceed = 0;
  for (double s : null_stats)
    if (std::isfinite(s) && std::abs(s) >= std::abs(observed)) ++exceed;
  stats::PermResult res;
  res.observed = observed;
  res.n_perm = n_perm;
  res.p = static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
  res.null_mean = stats::mean(null_stats);
  res.null_sd = null_stats.size() > 1 ? stats::sd(null_stats) : 0.0;
  return res;
}

ValidationReport make_report(int axis, const std::string& label, const std::string& stat,
                             double est, const stats::BootstrapCi& ci, double perm_p,
                             std::int64_t n) {
  ValidationReport r;
  r.axis = axis;
  r.label = label;
  r.stat = stat;
  r.estimate = est;
  r.ci_low = std::min(ci.low, est);
  r.ci_high = std::max(ci.high, est);
  r.perm_p = perm_p;
  r.n = n;
  return r;
}

}  // namespace

Eigen::MatrixXd AxisBasis::project(const Eigen::MatrixXd& atlas_rows) const {
  require(atlas_rows.cols() == unmixing.cols(), "project: state dim mismatch");
  return (atlas_rows.rowwise() - state_mean.transpose()) * unmixing.transpose();
}

AxisBasis fit_ica(const atlas::WordAtlas& wa, int n_axes, std::uint64_t seed) {
  const Eigen::MatrixXd& X = wa.atlas;
  require(n_axes >= 1, "fit_ica: n_axes must be >= 1");
  require(X.rows() > n_axes, "fit_ica: need more word types than axes");
  require(X.allFinite(), "fit_ica: atlas contains NaN/Inf");

  const double n = static_cast<double>(X.rows());
  AxisBasis basis;
  basis.n_axes = n_axes;
  basis.seed = seed;
  basis.tolerance = kIcaTol;
  basis.word_ids = wa.word_ids;
  basis.state_mean = X.colwise().mean().transpose();

  const Eigen::MatrixXd Xc = X.rowwise() - basis.state_mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  require(svd.singularValues().size() >= n_axes &&
              svd.singularValues()(n_axes - 1) > 1e-12 * std::max(1.0, svd.singularValues()(0)),
          "fit_ica: atlas rank below n_axes");

  const Eigen::VectorXd s = svd.singularValues().head(n_axes);
  const Eigen::MatrixXd Z = std::sqrt(n - 1.0) * svd.matrixU().leftCols(n_axes);
  // Whitening map K: Z = Xc * K; back-projection uses its pseudo-inverse.
  const Eigen::MatrixXd K =
      svd.matrixV().leftCols(n_axes) * (std::sqrt(n - 1.0) / s.array()).matrix().asDiagonal();
  const Eigen::MatrixXd Kpinv =
      svd.matrixV().leftCols(n_axes) * (s.array() / std::sqrt(n - 1.0)).matrix().asDiagonal();

  IcaState best;
  for (int r = 0; r < kIcaRestarts; ++r) {
    IcaState st = run_fastica(Z, derive_seed(seed, static_cast<std::uint64_t>(r)));
    if (st.delta < best.delta || (st.converged && !best.converged)) best = st;
    if (best.converged) break;
  }
  require(best.W.size() > 0 && best.W.allFinite(), "fit_ica: all restarts degenerate");

  basis.converged = best.converged;
  basis.iterations = best.iterations;
  basis.unmixing = best.W * K.transpose();
  basis.mixing = Kpinv * best.W.transpose();
  basis.word_scores = Xc * basis.unmixing.transpose();

  for (int a = 0; a < n_axes; ++a) {
    const double skew = skewness(basis.word_scores.col(a));
    bool flip;
    if (std::abs(skew) > 1e-8) {
      flip = skew < 0.0;
    } else {
      Eigen::Index arg = 0;
      basis.unmixing.row(a).cwiseAbs().maxCoeff(&arg);
      flip = basis.unmixing(a, arg) < 0.0;
    }
    if (flip) {
      basis.unmixing.row(a) *= -1.0;
      basis.mixing.col(a) *= -1.0;
      basis.word_scores.col(a) *= -1.0;
    }
  }
  return basis;
}

std::vector<int> hungarian_min_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  require(n >= 1 && n <= m, "hungarian: need 1 <= rows <= cols");
  require(cost.allFinite(), "hungarian: cost contains NaN/Inf");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      assign[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return assign;
}

AxisMatching match_axes(const Eigen::MatrixXd& scores_a, const Eigen::MatrixXd& scores_b) {
  require(scores_a.rows() == scores_b.rows(), "match_axes: word sets differ");
  require(scores_a.rows() >= 30, "match_axes: shared word set too small");
  const int ka = static_cast<int>(scores_a.cols());
  const int kb = static_cast<int>(scores_b.cols());
  require(ka >= 1 && kb >= 1, "match_axes: empty score matrix");

  Eigen::MatrixXd r(ka, kb);
  for (int i = 0; i < ka; ++i) {
    const Eigen::VectorXd a = scores_a.col(i);
    std::span<const double> sa(a.data(), static_cast<std::size_t>(a.size()));
    for (int j = 0; j < kb; ++j) {
      const Eigen::VectorXd b = scores_b.col(j);
      r(i, j) = stats::pearson_r(sa, std::span<const double>(b.data(),
                                                             static_cast<std::size_t>(b.size())));
    }
  }

  AxisMatching match;
  const Eigen::MatrixXd cost = 1.0 - r.array().abs();
  if (ka <= kb) {
    const auto assign = hungarian_min_assignment(cost);
    for (int i = 0; i < ka; ++i)
      match.pairs.push_back({i, assign[static_cast<std::size_t>(i)],
                             r(i, assign[static_cast<std::size_t>(i)])});
  } else {
    const auto assign = hungarian_min_assignment(cost.transpose());
    for (int j = 0; j < kb; ++j)
      match.pairs.push_back({assign[static_cast<std::size_t>(j)], j,
                             r(assign[static_cast<std::size_t>(j)], j)});
    std::sort(match.pairs.begin(), match.pairs.end(),
              [](const auto& x, const auto& y) { return x.axis_a < y.axis_a; });
  }
  double acc = 0.0;
  for (const auto& pr : match.pairs) acc += std::abs(pr.r);
  match.mean_abs_r = acc / static_cast<double>(match.pairs.size());
  return match;
}

std::vector<ValidationReport> validate_axis(const Eigen::VectorXd& scores,
                                            const Eigen::VectorXd& labels,
                                            const Eigen::MatrixXd& confounds, LabelMode mode,
                                            int n_perm, int n_boot, std::uint64_t seed,
                                            int axis_index, const std::string& label_name) {
  const Eigen::Index n = scores.size();
  require(labels.size() == n, "validate_axis: scores/labels length mismatch");
  require(n >= 30, "validate_axis: need n >= 30");
  require(confounds.size() == 0 || confounds.rows() == n,
          "validate_axis: confound rows mismatch");
  require(n_perm >= 1 && n_boot >= 1, "validate_axis: n_perm and n_boot must be >= 1");
  require(scores.allFinite() && labels.allFinite(), "validate_axis: NaN/Inf input");

  const std::span<const double> sc(scores.data(), static_cast<std::size_t>(n));
  const std::span<const double> lb(labels.data(), static_cast<std::size_t>(n));
  require(stats::sd(lb) > 0.0, "validate_axis: degenerate label (zero variance)");

  std::vector<ValidationReport> out;

  if (mode == LabelMode::continuous) {
    const double est = stats::pearson_r(sc, lb);
    const auto perm = label_perm_p(est, n_perm, derive_seed(seed, 1), [&](Rng& rng) {
      std::vector<double> shuffled(lb.begin(), lb.end());
      rng.shuffle(shuffled);
      return stats::pearson_r(sc, shuffled);
    });
    const auto ci = stats::bootstrap_ci(sc, lb, stats::PairedStat::r, n_boot, kCiLevel,
                                        derive_seed(seed, 2));
    out.push_back(make_report(axis_index, label_name, "r", est, ci, perm.p, n));
    return out;
  }

  std::vector<Eigen::Index> treated, control;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels(i) == 0.0 || labels(i) == 1.0, "validate_axis: binary labels must be 0/1");
    (labels(i) == 1.0 ? treated : control).push_back(i);
  }
  require(treated.size() >= 2 && control.size() >= 2,
          "validate_axis: each class needs at least 2 members");

  auto group_values = [&](const Eigen::VectorXd& v) {
    std::vector<double> a, b;
    for (const auto i : treated) a.push_back(v(i));
    for (const auto i : control) b.push_back(v(i));
    return std::make_pair(std::move(a), std::move(b));
  };

  {
    const auto [a, b] = group_values(scores);
    const double est = stats::cohen_d(a, b);
    const auto perm = stats::perm_test(a, b, stats::TwoSampleStat::d, n_perm,
                                       derive_seed(seed, 3));
    const auto ci =
        stats::bootstrap_ci(a, b, stats::PairedStat::d, n_boot, kCiLevel, derive_seed(seed, 4));
    out.push_back(make_report(axis_index, label_name, "d", est, ci, perm.p, n));
  }

  const Eigen::VectorXd resid =
      confounds.cols() > 0 ? stats::residualize(scores, confounds) : scores;
  {
    const auto [a, b] = group_values(resid);
    const double est = stats::cohen_d(a, b);
    const auto perm = stats::perm_test(a, b, stats::TwoSampleStat::d, n_perm,
                                       derive_seed(seed, 5));
    const auto ci =
        stats::bootstrap_ci(a, b, stats::PairedStat::d, n_boot, kCiLevel, derive_seed(seed, 6));
    out.push_back(make_report(axis_index, label_name, "residual_d", est, ci, perm.p, n));
  }

  // Standardized confounds for matching distance.
  Eigen::MatrixXd zc(n, confounds.cols());
  for (Eigen::Index c = 0; c < confounds.cols(); ++c) {
    const double m = confounds.col(c).mean();
    const double s0 =
        std::sqrt((confounds.col(c).array() - m).square().sum() / static_cast<double>(n - 1));
    zc.col(c) = (confounds.col(c).array() - m) / (s0 > 0.0 ? s0 : 1.0);
  }

  std::size_t n_matched = 0;
  const double est_m = matched_d_stat(scores, zc, treated, control, &n_matched);
  if (std::isfinite(est_m)) {
    const auto perm = label_perm_p(est_m, n_perm, derive_seed(seed, 7), [&](Rng& rng) {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
      rng.shuffle(idx);
      std::vector<Eigen::Index> pt(idx.begin(),
                                   idx.begin() + static_cast<std::ptrdiff_t>(treated.size()));
      std::vector<Eigen::Index> pc(idx.begin() + static_cast<std::ptrdiff_t>(treated.size()),
                                   idx.end());
      std::sort(pt.begin(), pt.end());
      std::sort(pc.begin(), pc.end());
      return matched_d_stat(scores, zc, pt, pc, nullptr);
    });
    // Pair bootstrap: resample matched pairs with replacement.
    const auto [mt, mc] = caliper_match(zc, treated, control);
    stats::BootstrapCi ci;
    {
      std::vector<double> reps;
      Rng rng(derive_seed(seed, 8));
      int redraws = 0;
      while (reps.size() < static_cast<std::size_t>(n_boot)) {
        std::vector<double> a, b;
        for (std::size_t k = 0; k < mt.size(); ++k) {
          const std::size_t j = static_cast<std::size_t>(rng.below(mt.size()));
          a.push_back(scores(mt[j]));
          b.push_back(scores(mc[j]));
        }
        if (stats::sd(a) <= 0.0 && stats::sd(b) <= 0.0) {
          if (++redraws > n_boot / 10 + 10) throw_numeric("matched_d bootstrap degenerate");
          continue;
        }
        reps.push_back(stats::cohen_d(a, b));
      }
      std::sort(reps.begin(), reps.end());
      const double alpha = (1.0 - kCiLevel) / 2.0;
      auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(reps.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, reps.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return reps[lo] * (1.0 - frac) + reps[hi] * frac;
      };
      ci.low = quantile(alpha);
      ci.high = quantile(1.0 - alpha);
    }
    out.push_back(make_report(axis_index, label_name, "matched_d", est_m, ci, perm.p,
                              static_cast<std::int64_t>(2 * n_matched)));
  }
  return out;
}

void save_axis_basis(const std::string& path_prefix, const AxisBasis& basis) {
  TensorArchive a;
  a.add("unmixing", basis.unmixing);
  a.add("mixing", basis.mixing);
  a.add("state_mean", basis.state_mean);
  a.add("word_scores", basis.word_scores);
  std::vector<double> ids(basis.word_ids.begin(), basis.word_ids.end());
  a.add("word_ids", ids);
  a.meta()["n_axes"] = std::to_string(basis.n_axes);
  a.meta()["seed"] = std::to_string(basis.seed);
  a.meta()["converged"] = basis.converged ? "1" : "0";
  a.meta()["iterations"] = std::to_string(basis.iterations);
  a.meta()["tolerance"] = format_g17(basis.tolerance);
  a.save(path_prefix + ".naxt");

  nlohmann::json manifest;
  manifest["n_axes"] = basis.n_axes;
  manifest["seed"] = basis.seed;
  manifest["convergence"] = {{"converged", basis.converged},
                             {"iterations", basis.iterations},
                             {"tolerance", basis.tolerance}};
  std::ofstream f(path_prefix + ".json", std::ios::trunc);
  if (!f) throw_io("cannot write axis manifest: " + path_prefix + ".json");
  f << manifest.dump(2) << "\n";
}

AxisBasis load_axis_basis(const std::string& path_prefix) {
  TensorArchive a = TensorArchive::load(path_prefix + ".naxt");
  AxisBasis basis;
  basis.unmixing = a.matrix("unmixing");
  basis.mixing = a.matrix("mixing");
  basis.state_mean = a.vector("state_mean");
  basis.word_scores = a.matrix("word_scores");
  const Eigen::VectorXd ids = a.vector("word_ids");
  for (Eigen::Index i = 0; i < ids.size(); ++i)
    basis.word_ids.push_back(static_cast<int>(std::lround(ids(i))));
  basis.n_axes = std::stoi(a.meta().at("n_axes"));
  basis.seed = std::stoull(a.meta().at("seed"));
  basis.converged = a.meta().at("converged") == "1";
  basis.iterations = std::stoi(a.meta().at("iterations"));
  basis.tolerance = std::stod(a.meta().at("tolerance"));
  return basis;
}

void save_validation_csv(const std::string& path, const std::vector<ValidationReport>& reports) {
  CsvWriter w({"axis", "label", "stat", "estimate", "ci_low", "ci_high", "perm_p", "n"});
  for (const auto& r : reports) {
    w.begin_row();
    w.cell(static_cast<std::int64_t>(r.axis));
    w.cell(r.label);
    w.cell(r.stat);
    w.cell(r.estimate);
    w.cell(r.ci_low);
    w.cell(r.ci_high);
    w.cell(r.perm_p);
    w.cell(r.n);
    w.end_row();
  }
  w.save(path);
}

}  // namespace neuraxis::axes
