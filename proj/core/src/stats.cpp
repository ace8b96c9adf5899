#include "neuraxis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuraxis/error.hpp"
#include "neuraxis/parallel.hpp"
#include "neuraxis/rng.hpp"

namespace neuraxis::stats {

double compensated_sum(std::span<const double> x) {
  double sum = 0.0, comp = 0.0;
  for (double v : x) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

double mean(std::span<const double> x) {
  require(!x.empty(), "mean of empty sample");
  return compensated_sum(x) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  require(x.size() >= 2, "variance needs at least 2 samples");
  const double m = mean(x);
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - m) * (x[i] - m);
  return compensated_sum(sq) / static_cast<double>(x.size() - 1);
}

double sd(std::span<const double> x) { return std::sqrt(variance(x)); }

RidgeFit ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha,
                     bool standardize) {
  require(alpha >= 0.0, "ridge: alpha must be nonnegative");
  require(X.rows() == Y.rows(), "ridge: X and Y row counts differ");
  require(X.rows() >= 2, "ridge: need at least 2 rows");

  const Eigen::Index n = X.rows(), p = X.cols();
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const Eigen::RowVectorXd y_mean = Y.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  Eigen::MatrixXd Yc = Y.rowwise() - y_mean;

  Eigen::RowVectorXd scale = Eigen::RowVectorXd::Ones(p);
  if (standardize) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double s = std::sqrt(Xc.col(j).squaredNorm() / static_cast<double>(n - 1));
      scale(j) = (s > 0.0) ? s : 1.0;  // constant columns stay as-is (weight 0)
    }
    Xc.array().rowwise() /= scale.array();
  }

  Eigen::MatrixXd G = Xc.transpose() * Xc;
  G.diagonal().array() += alpha;
  const Eigen::MatrixXd rhs = Xc.transpose() * Yc;

  Eigen::MatrixXd W;
  if (alpha == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
    if (!lu.isInvertible())
      throw_numeric("ridge: singular system at alpha=0 (X not full column rank)");
    W = lu.solve(rhs);
  } else {
    W = Eigen::LDLT<Eigen::MatrixXd>(G).solve(rhs);
  }
  if (!W.allFinite()) throw_numeric("ridge: non-finite solution");

  if (standardize) W.array().colwise() /= scale.transpose().array();

  RidgeFit fit;
  fit.weights = std::move(W);
  fit.intercept = y_mean - x_mean * fit.weights;
  return fit;
}

namespace {

double pooled_sd(std::span<const double> a, std::span<const double> b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = variance(a), vb = variance(b);
  return std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
}

double two_sample_stat(std::span<const double> a, std::span<const double> b, TwoSampleStat s) {
  if (s == TwoSampleStat::mean_diff) return mean(a) - mean(b);
  return cohen_d(a, b);
}

}  // namespace

double cohen_d(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, "cohen_d: both samples need size >= 2");
  const double s = pooled_sd(a, b);
  if (!(s > 0.0)) throw_numeric("cohen_d: zero pooled SD");
  return (mean(a) - mean(b)) / s;
}

PermResult perm_test(std::span<const double> a, std::span<const double> b, TwoSampleStat stat,
                     int n_perm, std::uint64_t seed) {
  require(n_perm >= 100, "perm_test: n_perm must be >= 100");
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> pooled(na + nb);
  std::copy(a.begin(), a.end(), pooled.begin());
  std::copy(b.begin(), b.end(), pooled.begin() + static_cast<std::ptrdiff_t>(na));

  PermResult res;
  res.n_perm = n_perm;
  res.observed = two_sample_stat(a, b, stat);
  const double obs_abs = std::abs(res.observed);

  std::vector<double> null_stats(static_cast<std::size_t>(n_perm));
  parallel_for(n_perm, [&](std::int64_t k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::vector<double> perm = pooled;
    rng.shuffle(perm);
    std::span<const double> pa(perm.data(), na);
    std::span<const double> pb(perm.data() + na, nb);
    null_stats[static_cast<std::size_t>(k)] = two_sample_stat(pa, pb, stat);
  });

  int exceed = 0;
  for (double t : null_stats)
    if (std::abs(t) >= obs_abs) ++exceed;
  res.p = (1.0 + exceed) / (1.0 + n_perm);
  res.null_mean = mean(null_stats);
  res.null_sd = sd(null_stats);
  return res;
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, "welch_t: both samples need size >= 2");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = variance(a) / na, vb = variance(b) / nb;
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw_numeric("welch_t: zero variance in both samples");
  WelchResult r;
  r.t = (mean(a) - mean(b)) / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  // two-sided p via Student-t CDF: P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
  const double x = r.df / (r.df + r.t * r.t);
  r.p = incomplete_beta(r.df / 2.0, 0.5, x);
  return r;
}

BootstrapCi bootstrap_ci(std::span<const double> x, std::span<const double> y, PairedStat stat,
                         int n_boot, double level, std::uint64_t seed) {
  require(n_boot >= 200, "bootstrap_ci: n_boot must be >= 200");
  require(level > 0.0 && level < 1.0, "bootstrap_ci: level in (0,1)");
  if (stat == PairedStat::r) require(x.size() == y.size(), "bootstrap_ci: paired sizes differ");

  struct Draw {
    double value = 0.0;
    int redraws = 0;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(n_boot));

  parallel_for(n_boot, [&](std::int64_t k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    Draw d;
    for (;;) {
      bool ok = true;
      if (stat == PairedStat::r) {
        const std::size_t n = x.size();
        std::vector<double> bx(n), by(n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = static_cast<std::size_t>(rng.below(n));
          bx[i] = x[j];
          by[i] = y[j];
        }
        if (variance(bx) > 0.0 && variance(by) > 0.0)
          d.value = pearson_r(bx, by);
        else
          ok = false;
      } else {
        std::vector<double> ba(x.size()), bb(y.size());
        for (auto& v : ba) v = x[rng.below(x.size())];
        for (auto& v : bb) v = y[rng.below(y.size())];
        if (pooled_sd(ba, bb) > 0.0)
          d.value = cohen_d(ba, bb);
        else
          ok = false;
      }
      if (ok) break;
      if (++d.redraws > 50) break;  // give up on this draw; counted below
    }
    draws[static_cast<std::size_t>(k)] = d;
  });

  BootstrapCi ci;
  std::vector<double> vals;
  vals.reserve(draws.size());
  for (const auto& d : draws) {
    ci.redraws += d.redraws;
    vals.push_back(d.value);
  }
  if (ci.redraws > n_boot / 10)
    throw_numeric("bootstrap_ci: more than 10% of resamples were degenerate");

  std::sort(vals.begin(), vals.end());
  const double a = (1.0 - level) / 2.0;
  const auto pick = [&](double q) {
    const double pos = q * (static_cast<double>(vals.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(vals.size() - 1, lo + 1);
    const double frac = pos - std::floor(pos);
    return vals[lo] * (1.0 - frac) + vals[hi] * frac;
  };
  ci.low = pick(a);
  ci.high = pick(1.0 - a);
  ci.degenerate = (ci.low == ci.high);
  return ci;
}

FdrResult bh_fdr(std::span<const double> pvals, double q) {
  for (double p : pvals)
    require(p >= 0.0 && p <= 1.0, "bh_fdr: p-values must be in [0,1]");
  const std::size_t m = pvals.size();
  FdrResult res;
  res.q = q;
  res.rejected.assign(m, false);
  if (m == 0) return res;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return pvals[i] < pvals[j]; });

  std::size_t k_star = 0;  // 1-based rank of the largest passing p
  for (std::size_t k = 1; k <= m; ++k) {
    const double pk = pvals[order[k - 1]];
    if (pk <= q * static_cast<double>(k) / static_cast<double>(m)) k_star = k;
  }
  if (k_star > 0) {
    res.threshold = pvals[order[k_star - 1]];
    for (std::size_t i = 0; i < m; ++i)
      if (pvals[i] <= res.threshold) res.rejected[i] = true;
  }
  return res;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson_r: sizes differ");
  require(x.size() >= 3, "pearson_r: need at least 3 samples");
  const double mx = mean(x), my = mean(y);
  std::vector<double> xy(x.size()), xx(x.size()), yy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    xy[i] = dx * dy;
    xx[i] = dx * dx;
    yy[i] = dy * dy;
  }
  const double sxx = compensated_sum(xx), syy = compensated_sum(yy);
  if (!(sxx > 0.0) || !(syy > 0.0)) throw_numeric("pearson_r: zero variance");
  return compensated_sum(xy) / std::sqrt(sxx * syy);
}

Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  require(y.size() == X.rows(), "residualize: row mismatch");
  Eigen::MatrixXd A(X.rows(), X.cols() + 1);
  A.col(0).setOnes();
  A.rightCols(X.cols()) = X;
  const Eigen::VectorXd beta = A.colPivHouseholderQr().solve(y);
  return y - A * beta;
}

double pearson_partial(std::span<const double> x, std::span<const double> y,
                       const Eigen::MatrixXd& confounds) {
  require(x.size() == y.size(), "pearson_partial: sizes differ");
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  require(n >= 3 + confounds.cols(), "pearson_partial: too few samples for confound count");
  if (confounds.cols() == 0) return pearson_r(x, y);
  require(confounds.rows() == n, "pearson_partial: confound row mismatch");

  Eigen::VectorXd vx = Eigen::Map<const Eigen::VectorXd>(x.data(), n);
  Eigen::VectorXd vy = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::VectorXd rx = residualize(vx, confounds);
  const Eigen::VectorXd ry = residualize(vy, confounds);
  // Rounding noise after a perfect fit is not variance; compare residual
  // scale against the original variable scale.
  const double x_scale = (vx.array() - vx.mean()).matrix().squaredNorm();
  const double y_scale = (vy.array() - vy.mean()).matrix().squaredNorm();
  if (rx.squaredNorm() <= 1e-20 * x_scale || ry.squaredNorm() <= 1e-20 * y_scale)
    throw_numeric("pearson_partial: zero residual variance after confound removal");
  std::vector<double> sx(rx.data(), rx.data() + n);
  std::vector<double> sy(ry.data(), ry.data() + n);
  return pearson_r(sx, sy);
}

double pearson_partial(std::span<const double> x, std::span<const double> y) {
  return pearson_partial(x, y, Eigen::MatrixXd(static_cast<Eigen::Index>(x.size()), 0));
}

namespace {
std::vector<double> ranks_with_ties(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks_with_ties(x);
  const auto ry = ranks_with_ties(y);
  return pearson_r(rx, ry);
}

// Regularized incomplete beta via Lentz continued fraction.
double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);

  const auto cont_frac = [](double a_, double b_, double x_) {
    const double tiny = 1e-300;
    double c = 1.0, d = 1.0 - (a_ + b_) * x_ / (a_ + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
      const double dm = static_cast<double>(m);
      double num = dm * (b_ - dm) * x_ / ((a_ + 2.0 * dm - 1.0) * (a_ + 2.0 * dm));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(a_ + dm) * (a_ + b_ + dm) * x_ / ((a_ + 2.0 * dm) * (a_ + 2.0 * dm + 1.0));
      d = 1.0 + num * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = d * c;
      h *= delta;
      if (std::abs(delta - 1.0) < 1e-14) break;
    }
    return h;
  };

  // front is symmetric under (a,b,x) -> (b,a,1-x), so the mirrored branch can
  // be computed directly; recursion would not terminate at the switchover.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * cont_frac(a, b, x) / a;
  return 1.0 - front * cont_frac(b, a, 1.0 - x) / b;
}

}  // namespace neuraxis::stats
