#include "neuraxis/split_half.hpp"

#include <algorithm>
#include <cmath>

#include "neuraxis/axes.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/rng.hpp"

namespace neuraxis::atlas {

namespace {

// Restrict an atlas to the given word ids (which must all be present).
WordAtlas restrict_atlas(const WordAtlas& a, const std::vector<int>& ids) {
  WordAtlas out;
  out.provenance = a.provenance;
  out.word_ids = ids;
  out.atlas.resize(static_cast<Eigen::Index>(ids.size()), a.atlas.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int row = a.row_of(ids[i]);
    require(row >= 0, "restrict_atlas: word id missing");
    out.atlas.row(static_cast<Eigen::Index>(i)) = a.atlas.row(row);
    out.counts.push_back(a.counts[static_cast<std::size_t>(row)]);
  }
  return out;
}

}  // namespace

SplitReport split_half(const std::vector<WordAtlas>& atlases, int n_axes, std::uint64_t seed) {
  require(atlases.size() >= 4, "split_half: need at least 4 atlases");
  std::vector<WordAtlas> odd, even;
  for (std::size_t i = 0; i < atlases.size(); ++i)
    (i % 2 == 0 ? odd : even).push_back(atlases[i]);
  require(odd.size() >= 2 && even.size() >= 2, "split_half: need at least 2 atlases per half");

  const WordAtlas avg_odd = average_atlases(odd);
  const WordAtlas avg_even = average_atlases(even);

  std::vector<int> shared;
  std::set_intersection(avg_odd.word_ids.begin(), avg_odd.word_ids.end(),
                        avg_even.word_ids.begin(), avg_even.word_ids.end(),
                        std::back_inserter(shared));
  require(shared.size() >= 30, "split_half: shared word set too small");

  const WordAtlas a = restrict_atlas(avg_odd, shared);
  const WordAtlas b = restrict_atlas(avg_even, shared);

  const axes::AxisBasis basis_a = axes::fit_ica(a, n_axes, derive_seed(seed, 1));
  const axes::AxisBasis basis_b = axes::fit_ica(b, n_axes, derive_seed(seed, 2));

  const Eigen::MatrixXd s_aa = basis_a.project(a.atlas);
  const Eigen::MatrixXd s_ab = basis_a.project(b.atlas);
  const Eigen::MatrixXd s_bb = basis_b.project(b.atlas);
  const Eigen::MatrixXd s_ba = basis_b.project(a.atlas);

  const axes::AxisMatching m1 = axes::match_axes(s_aa, s_ab);
  const axes::AxisMatching m2 = axes::match_axes(s_bb, s_ba);
  // Align the even-half axes to the odd-half axis labels.
  const axes::AxisMatching align = axes::match_axes(s_aa, s_bb);

  SplitReport report;
  report.n_odd = static_cast<int>(odd.size());
  report.n_even = static_cast<int>(even.size());
  report.shared_words = static_cast<std::int64_t>(shared.size());
  report.abs_r_mean.resize(static_cast<std::size_t>(n_axes), 0.0);
  report.abs_r_spread.resize(static_cast<std::size_t>(n_axes), 0.0);

  double grand = 0.0;
  for (int i = 0; i < n_axes; ++i) {
    const double r1 = std::abs(m1.pairs[static_cast<std::size_t>(i)].r);
    const int b_axis = align.pairs[static_cast<std::size_t>(i)].axis_b;
    const double r2 = std::abs(m2.pairs[static_cast<std::size_t>(b_axis)].r);
    report.abs_r_mean[static_cast<std::size_t>(i)] = 0.5 * (r1 + r2);
    report.abs_r_spread[static_cast<std::size_t>(i)] = 0.5 * std::abs(r1 - r2);
    grand += report.abs_r_mean[static_cast<std::size_t>(i)];
  }
  report.mean_abs_r = grand / static_cast<double>(n_axes);
  return report;
}

}  // namespace neuraxis::atlas
