#include "neuraxis/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/table.hpp"
#include "neuraxis/tensor_archive.hpp"

namespace neuraxis::atlas {

namespace {

constexpr int kFeaturesPerLag = 3;  // emb_change, logfreq, pos_id

// Index of the most recent event with onset <= t, or -1.
int last_onset_at_or_before(const std::vector<synth::WordEvent>& events, double t) {
  int lo = 0, hi = static_cast<int>(events.size()) - 1, ans = -1;
  while (lo <= hi) {
    const int mid = (lo + hi) / 2;
    if (events[static_cast<std::size_t>(mid)].onset <= t) {
      ans = mid;
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return ans;
}

struct PooledStats {
  Eigen::VectorXd means, sds;
};

// Column stats pooled across all rows of the given designs.
PooledStats pooled_column_stats(const std::vector<const DesignMatrix*>& designs) {
  const Eigen::Index n_cols = designs.front()->raw.cols();
  PooledStats st;
  st.means.resize(n_cols);
  st.sds.resize(n_cols);
  for (Eigen::Index c = 0; c < n_cols; ++c) {
    std::vector<double> vals;
    for (const auto* d : designs)
      for (Eigen::Index r = 0; r < d->raw.rows(); ++r) vals.push_back(d->raw(r, c));
    st.means(c) = stats::mean(vals);
    const double s = stats::sd(vals);
    st.sds(c) = s > 0.0 ? s : 1.0;
  }
  return st;
}

double fold_r2(const Eigen::MatrixXd& y, const Eigen::MatrixXd& yhat) {
  double acc = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index d = 0; d < y.cols(); ++d) {
    const double m = y.col(d).mean();
    const double sst = (y.col(d).array() - m).square().sum();
    if (sst <= 0.0) continue;
    const double sse = (y.col(d) - yhat.col(d)).squaredNorm();
    acc += 1.0 - sse / sst;
    ++used;
  }
  return used > 0 ? acc / static_cast<double>(used) : 0.0;
}

}  // namespace

Eigen::MatrixXd StateModel::destandardized_weights() const {
  Eigen::MatrixXd w = weights;
  for (Eigen::Index c = 0; c < w.rows(); ++c) w.row(c) /= col_sds(c);
  return w;
}

Eigen::VectorXd StateModel::raw_intercept() const {
  return intercept - destandardized_weights().transpose() * col_means;
}

Eigen::MatrixXd StateModel::predict(const Eigen::MatrixXd& raw_design) const {
  require(raw_design.cols() == weights.rows(), "predict: column count mismatch");
  Eigen::MatrixXd z = raw_design;
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    z.col(c) = (z.col(c).array() - col_means(c)) / col_sds(c);
  Eigen::MatrixXd out = z * weights;
  out.rowwise() += intercept.transpose();
  return out;
}

int WordAtlas::row_of(int word_id) const {
  const auto it = std::lower_bound(word_ids.begin(), word_ids.end(), word_id);
  if (it == word_ids.end() || *it != word_id) return -1;
  return static_cast<int>(std::distance(word_ids.begin(), it));
}

DesignMatrix build_design(const std::vector<synth::WordEvent>& events,
                          const std::vector<double>& window_times,
                          const std::vector<double>& lags) {
  require(!events.empty(), "build_design: empty event list");
  require(!window_times.empty(), "build_design: no windows");
  require(!lags.empty(), "build_design: no lags");
  for (double l : lags) require(l >= 0.0, "build_design: negative lag");
  for (std::size_t i = 1; i < events.size(); ++i)
    require(events[i - 1].onset <= events[i].onset, "build_design: events not sorted");

  const Eigen::Index n_rows = static_cast<Eigen::Index>(window_times.size());
  const Eigen::Index n_cols = static_cast<Eigen::Index>(lags.size()) * kFeaturesPerLag;

  DesignMatrix d;
  d.lags_s = lags;
  d.window_times = window_times;
  d.raw.resize(n_rows, n_cols);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> present(n_rows, n_cols);

  for (std::size_t li = 0; li < lags.size(); ++li) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "emb_change@%g", lags[li]);
    d.column_names.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "logfreq@%g", lags[li]);
    d.column_names.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "pos_id@%g", lags[li]);
    d.column_names.emplace_back(buf);
  }

  for (Eigen::Index r = 0; r < n_rows; ++r) {
    for (std::size_t li = 0; li < lags.size(); ++li) {
      const double t = window_times[static_cast<std::size_t>(r)] - lags[li];
      const int e = last_onset_at_or_before(events, t);
      const Eigen::Index c0 = static_cast<Eigen::Index>(li) * kFeaturesPerLag;
      if (e < 0) {
        d.raw.block(r, c0, 1, kFeaturesPerLag).setZero();
        present.block(r, c0, 1, kFeaturesPerLag).setConstant(false);
        d.missing_cells += 1;
      } else {
        const auto& ev = events[static_cast<std::size_t>(e)];
        d.raw(r, c0 + 0) = ev.emb_change;
        d.raw(r, c0 + 1) = ev.logfreq;
        d.raw(r, c0 + 2) = static_cast<double>(ev.pos_id);
        present.block(r, c0, 1, kFeaturesPerLag).setConstant(true);
      }
    }
  }

  // Standardize over present cells; a missing cell becomes the column mean in
  // raw units, i.e. exactly 0 after standardization.
  d.col_means.resize(n_cols);
  d.col_sds.resize(n_cols);
  d.X.resize(n_rows, n_cols);
  for (Eigen::Index c = 0; c < n_cols; ++c) {
    std::vector<double> vals;
    for (Eigen::Index r = 0; r < n_rows; ++r)
      if (present(r, c)) vals.push_back(d.raw(r, c));
    const double m = vals.empty() ? 0.0 : stats::mean(vals);
    const double s = vals.size() > 1 ? stats::sd(vals) : 0.0;
    d.col_means(c) = m;
    d.col_sds(c) = s > 0.0 ? s : 1.0;
    for (Eigen::Index r = 0; r < n_rows; ++r) {
      if (!present(r, c)) d.raw(r, c) = m;
      d.X(r, c) = (d.raw(r, c) - m) / d.col_sds(c);
    }
  }
  return d;
}

std::pair<StateModel, std::vector<Eigen::MatrixXd>> fit_state_model(
    const std::vector<DesignMatrix>& designs, const std::vector<Eigen::MatrixXd>& states,
    const std::vector<double>& alphas, int n_folds) {
  require(!designs.empty() && designs.size() == states.size(),
          "fit_state_model: designs/states mismatch");
  require(n_folds >= 2, "fit_state_model: need at least 2 folds");
  require(static_cast<int>(designs.size()) >= n_folds, "fit_state_model: fewer runs than folds");
  require(!alphas.empty(), "fit_state_model: empty alpha grid");
  for (double a : alphas) require(a > 0.0, "fit_state_model: alpha must be positive");

  const int n_runs = static_cast<int>(designs.size());
  const Eigen::Index n_cols = designs.front().X.cols();
  const Eigen::Index state_dim = states.front().cols();
  for (int r = 0; r < n_runs; ++r) {
    require(designs[static_cast<std::size_t>(r)].X.cols() == n_cols,
            "fit_state_model: design width mismatch");
    require(designs[static_cast<std::size_t>(r)].X.rows() ==
                states[static_cast<std::size_t>(r)].rows(),
            "fit_state_model: run rows mismatch");
    require(states[static_cast<std::size_t>(r)].cols() == state_dim,
            "fit_state_model: state dim mismatch");
  }

  // Pooled standardization across all runs of this subject.
  std::vector<const DesignMatrix*> dptrs;
  for (const auto& d : designs) dptrs.push_back(&d);
  const PooledStats pooled = pooled_column_stats(dptrs);
  std::vector<Eigen::MatrixXd> Z(static_cast<std::size_t>(n_runs));
  for (int r = 0; r < n_runs; ++r) {
    Z[static_cast<std::size_t>(r)] = designs[static_cast<std::size_t>(r)].raw;
    for (Eigen::Index c = 0; c < n_cols; ++c)
      Z[static_cast<std::size_t>(r)].col(c) =
          (Z[static_cast<std::size_t>(r)].col(c).array() - pooled.means(c)) / pooled.sds(c);
  }

  std::vector<int> fold_of_run(static_cast<std::size_t>(n_runs));
  for (int r = 0; r < n_runs; ++r) fold_of_run[static_cast<std::size_t>(r)] = r % n_folds;

  auto stack = [&](const std::vector<int>& runs, Eigen::MatrixXd& X, Eigen::MatrixXd& Y) {
    Eigen::Index rows = 0;
    for (int r : runs) rows += Z[static_cast<std::size_t>(r)].rows();
    X.resize(rows, n_cols);
    Y.resize(rows, state_dim);
    Eigen::Index at = 0;
    for (int r : runs) {
      const auto& z = Z[static_cast<std::size_t>(r)];
      X.middleRows(at, z.rows()) = z;
      Y.middleRows(at, z.rows()) = states[static_cast<std::size_t>(r)];
      at += z.rows();
    }
  };

  StateModel model;
  model.col_means = pooled.means;
  model.col_sds = pooled.sds;
  model.fold_of_run = fold_of_run;

  std::vector<std::vector<int>> train_runs(static_cast<std::size_t>(n_folds)),
      test_runs(static_cast<std::size_t>(n_folds));
  for (int r = 0; r < n_runs; ++r) {
    for (int f = 0; f < n_folds; ++f) {
      if (fold_of_run[static_cast<std::size_t>(r)] == f)
        test_runs[static_cast<std::size_t>(f)].push_back(r);
      else
        train_runs[static_cast<std::size_t>(f)].push_back(r);
    }
  }

  double best_r2 = -std::numeric_limits<double>::infinity();
  double best_alpha = alphas.front();
  std::vector<std::vector<stats::RidgeFit>> fold_fits(
      alphas.size(), std::vector<stats::RidgeFit>(static_cast<std::size_t>(n_folds)));
  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    double r2_acc = 0.0;
    for (int f = 0; f < n_folds; ++f) {
      Eigen::MatrixXd Xtr, Ytr, Xte, Yte;
      stack(train_runs[static_cast<std::size_t>(f)], Xtr, Ytr);
      stack(test_runs[static_cast<std::size_t>(f)], Xte, Yte);
      const auto fit = stats::ridge_solve(Xtr, Ytr, alphas[ai], false);
      fold_fits[ai][static_cast<std::size_t>(f)] = fit;
      Eigen::MatrixXd pred = Xte * fit.weights;
      pred.rowwise() += fit.intercept;
      r2_acc += fold_r2(Yte, pred);
    }
    const double mean_r2 = r2_acc / static_cast<double>(n_folds);
    model.cv_table.emplace_back(alphas[ai], mean_r2);
    if (mean_r2 > best_r2) {
      best_r2 = mean_r2;
      best_alpha = alphas[ai];
    }
  }
  model.alpha = best_alpha;

  // OOF predictions: each run is scored by the fold model that excluded it.
  std::size_t best_ai = 0;
  for (std::size_t ai = 0; ai < alphas.size(); ++ai)
    if (alphas[ai] == best_alpha) best_ai = ai;
  std::vector<Eigen::MatrixXd> oof(static_cast<std::size_t>(n_runs));
  for (int r = 0; r < n_runs; ++r) {
    const auto& fit = fold_fits[best_ai][static_cast<std::size_t>(fold_of_run[static_cast<std::size_t>(r)])];
    Eigen::MatrixXd pred = Z[static_cast<std::size_t>(r)] * fit.weights;
    pred.rowwise() += fit.intercept;
    oof[static_cast<std::size_t>(r)] = std::move(pred);
  }

  std::vector<int> all_runs(static_cast<std::size_t>(n_runs));
  std::iota(all_runs.begin(), all_runs.end(), 0);
  Eigen::MatrixXd Xall, Yall;
  stack(all_runs, Xall, Yall);
  const auto final_fit = stats::ridge_solve(Xall, Yall, best_alpha, false);
  model.weights = final_fit.weights;
  model.intercept = final_fit.intercept.transpose();
  return {std::move(model), std::move(oof)};
}

WordAtlas build_word_atlas(const std::vector<Eigen::MatrixXd>& preds,
                           const std::vector<std::vector<synth::WordEvent>>& events,
                           const std::vector<std::vector<double>>& window_times,
                           const std::string& provenance) {
  require(!preds.empty() && preds.size() == events.size() && preds.size() == window_times.size(),
          "build_word_atlas: per-run inputs misaligned");
  const Eigen::Index state_dim = preds.front().cols();

  std::map<int, std::pair<Eigen::VectorXd, int>> acc;  // word_id -> (sum, count)
  std::int64_t dropped = 0;
  for (std::size_t run = 0; run < preds.size(); ++run) {
    const auto& p = preds[run];
    const auto& ev = events[run];
    const auto& wt = window_times[run];
    require(p.cols() == state_dim, "build_word_atlas: state dim mismatch");
    require(p.rows() == static_cast<Eigen::Index>(wt.size()),
            "build_word_atlas: predictions not aligned with window times");
    require(!ev.empty(), "build_word_atlas: run with no events");
    for (std::size_t w = 0; w < wt.size(); ++w) {
      const int e = last_onset_at_or_before(ev, wt[w]);
      if (e < 0) {
        ++dropped;
        continue;
      }
      const int word = ev[static_cast<std::size_t>(e)].word_id;
      auto it = acc.find(word);
      if (it == acc.end())
        it = acc.emplace(word, std::make_pair(Eigen::VectorXd::Zero(state_dim).eval(), 0)).first;
      it->second.first += p.row(static_cast<Eigen::Index>(w)).transpose();
      it->second.second += 1;
    }
  }
  require(!acc.empty(), "build_word_atlas: every window was dropped");

  WordAtlas atlas;
  atlas.provenance = provenance;
  atlas.dropped_windows = dropped;
  atlas.atlas.resize(static_cast<Eigen::Index>(acc.size()), state_dim);
  Eigen::Index row = 0;
  for (const auto& [word, sc] : acc) {
    atlas.word_ids.push_back(word);
    atlas.counts.push_back(sc.second);
    atlas.atlas.row(row++) = sc.first.transpose() / static_cast<double>(sc.second);
  }
  return atlas;
}

WordAtlas average_atlases(const std::vector<WordAtlas>& atlases) {
  require(!atlases.empty(), "average_atlases: empty input");
  const Eigen::Index state_dim = atlases.front().atlas.cols();
  for (const auto& a : atlases)
    require(a.atlas.cols() == state_dim, "average_atlases: state dim mismatch");

  const std::size_t n = atlases.size();
  std::map<int, std::pair<Eigen::VectorXd, int>> acc;
  for (const auto& a : atlases) {
    for (std::size_t i = 0; i < a.word_ids.size(); ++i) {
      auto it = acc.find(a.word_ids[i]);
      if (it == acc.end())
        it = acc.emplace(a.word_ids[i],
                         std::make_pair(Eigen::VectorXd::Zero(state_dim).eval(), 0))
                 .first;
      it->second.first += a.atlas.row(static_cast<Eigen::Index>(i)).transpose();
      it->second.second += 1;
    }
  }

  WordAtlas out;
  out.provenance = "average(n=" + std::to_string(n) + ")";
  std::vector<std::pair<int, std::pair<Eigen::VectorXd, int>>> kept;
  for (auto& [word, sc] : acc)
    if (static_cast<std::size_t>(sc.second) * 2 >= n) kept.emplace_back(word, sc);
  require(!kept.empty(), "average_atlases: no word present in at least half the atlases");
  out.atlas.resize(static_cast<Eigen::Index>(kept.size()), state_dim);
  Eigen::Index row = 0;
  for (auto& [word, sc] : kept) {
    out.word_ids.push_back(word);
    out.counts.push_back(sc.second);
    out.atlas.row(row++) = sc.first.transpose() / static_cast<double>(sc.second);
  }
  return out;
}

void save_atlas(const std::string& path_prefix, const WordAtlas& atlas) {
  TensorArchive a;
  a.add("atlas", atlas.atlas);
  std::vector<double> ids(atlas.word_ids.begin(), atlas.word_ids.end());
  std::vector<double> counts(atlas.counts.begin(), atlas.counts.end());
  a.add("word_ids", ids);
  a.add("counts", counts);
  a.meta()["provenance"] = atlas.provenance;
  a.meta()["dropped_windows"] = std::to_string(atlas.dropped_windows);
  a.save(path_prefix + ".naxt");

  nlohmann::json manifest;
  manifest["word_ids"] = atlas.word_ids;
  manifest["counts"] = atlas.counts;
  manifest["provenance"] = atlas.provenance;
  manifest["dropped_windows"] = atlas.dropped_windows;
  manifest["state_dim"] = atlas.atlas.cols();
  std::ofstream f(path_prefix + ".json", std::ios::trunc);
  if (!f) throw_io("cannot write atlas manifest: " + path_prefix + ".json");
  f << manifest.dump(2) << "\n";
}

WordAtlas load_atlas(const std::string& path_prefix) {
  TensorArchive a = TensorArchive::load(path_prefix + ".naxt");
  WordAtlas atlas;
  atlas.atlas = a.matrix("atlas");
  const Eigen::VectorXd ids = a.vector("word_ids");
  const Eigen::VectorXd counts = a.vector("counts");
  for (Eigen::Index i = 0; i < ids.size(); ++i) {
    atlas.word_ids.push_back(static_cast<int>(std::lround(ids(i))));
    atlas.counts.push_back(static_cast<int>(std::lround(counts(i))));
  }
  atlas.provenance = a.meta().at("provenance");
  atlas.dropped_windows = std::stoll(a.meta().at("dropped_windows"));
  return atlas;
}

void save_atlas_summary_csv(const std::string& path, const WordAtlas& atlas) {
  CsvWriter w({"word_id", "count"});
  for (std::size_t i = 0; i < atlas.word_ids.size(); ++i) {
    w.begin_row();
    w.cell(static_cast<std::int64_t>(atlas.word_ids[i]));
    w.cell(static_cast<std::int64_t>(atlas.counts[i]));
    w.end_row();
  }
  w.save(path);
}

}  // namespace neuraxis::atlas
