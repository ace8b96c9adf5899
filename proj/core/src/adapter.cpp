#include "neuraxis/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "neuraxis/error.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/table.hpp"
#include "neuraxis/tensor_archive.hpp"

namespace neuraxis::adapter {

namespace {

constexpr double kZeroNorm = 1e-12;

std::vector<double> col_to_vec(const Eigen::MatrixXd& m, Eigen::Index c) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, c);
  return v;
}

SteeringVector normalized_vector(Eigen::VectorXd dir, std::string provenance, int layer,
                                 const std::string& zero_msg) {
  const double norm = dir.norm();
  if (norm < kZeroNorm) throw_numeric(zero_msg);
  SteeringVector v;
  v.direction = dir / norm;
  v.provenance = std::move(provenance);
  v.layer = layer;
  return v;
}

}  // namespace

HiddenTable collect_word_hidden(const model::ModelWeights& w, const synth::Corpus& corpus,
                                int layer, const std::vector<int>& word_ids) {
  const model::ModelConfig& cfg = w.config();
  require(layer >= 0 && layer <= cfg.n_layers, "hidden-state index out of range");
  require(!corpus.sequences.empty(), "collect_word_hidden: empty corpus");
  require(!word_ids.empty(), "collect_word_hidden: empty word id list");

  std::vector<int> wanted = word_ids;
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  const int max_id = wanted.back();
  require(wanted.front() >= 0, "collect_word_hidden: negative word id");

  std::vector<char> is_wanted(static_cast<std::size_t>(max_id) + 1, 0);
  for (int id : wanted)
    if (id < cfg.vocab_size) is_wanted[static_cast<std::size_t>(id)] = 1;

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(max_id + 1, cfg.d_model);
  std::vector<int> counts(static_cast<std::size_t>(max_id) + 1, 0);

  for (const auto& seq : corpus.sequences) {
    for (std::size_t start = 0; start < seq.size();
         start += static_cast<std::size_t>(cfg.context_len)) {
      const std::size_t len =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.context_len), seq.size() - start);
      const std::vector<int> chunk(seq.begin() + static_cast<std::ptrdiff_t>(start),
                                   seq.begin() + static_cast<std::ptrdiff_t>(start + len));
      const model::ForwardResult res = model::forward(w, chunk, std::nullopt, true);
      const Eigen::MatrixXd& state = res.trace.states[static_cast<std::size_t>(layer)];
      for (std::size_t p = 0; p < chunk.size(); ++p) {
        const int tok = chunk[p];
        if (tok <= max_id && is_wanted[static_cast<std::size_t>(tok)]) {
          sums.row(tok) += state.row(static_cast<Eigen::Index>(p));
          ++counts[static_cast<std::size_t>(tok)];
        }
      }
    }
  }

  HiddenTable table;
  table.layer = layer;
  for (int id : wanted) {
    if (id <= max_id && counts[static_cast<std::size_t>(id)] > 0)
      table.word_ids.push_back(id);
    else
      ++table.dropped_words;
  }
  require(!table.word_ids.empty(),
          "collect_word_hidden: no requested word occurs in the corpus");
  table.hidden.resize(static_cast<Eigen::Index>(table.word_ids.size()), cfg.d_model);
  for (std::size_t r = 0; r < table.word_ids.size(); ++r) {
    const int id = table.word_ids[r];
    const int c = counts[static_cast<std::size_t>(id)];
    table.hidden.row(static_cast<Eigen::Index>(r)) = sums.row(id) / static_cast<double>(c);
    table.counts.push_back(c);
  }
  return table;
}

Eigen::VectorXd Adapter::predict(const Eigen::VectorXd& h) const {
  require(h.size() == feat_mean.size(), "adapter input dimension mismatch");
  const Eigen::VectorXd z = (h - feat_mean).cwiseQuotient(feat_sd);
  return W * z + b;
}

Eigen::MatrixXd Adapter::predict_rows(const Eigen::MatrixXd& h) const {
  require(h.cols() == feat_mean.size(), "adapter input dimension mismatch");
  Eigen::MatrixXd z = h.rowwise() - feat_mean.transpose();
  z.array().rowwise() /= feat_sd.transpose().array();
  Eigen::MatrixXd out = z * W.transpose();
  out.rowwise() += b.transpose();
  return out;
}

Adapter fit_adapter(const HiddenTable& table, const Eigen::MatrixXd& axis_scores,
                    const std::vector<double>& alphas, double holdout_frac, std::uint64_t seed) {
  const int n = table.rows();
  require(n >= 100, "adapter fit requires >= 100 matched words");
  require(axis_scores.rows() == n, "axis scores must align with hidden table rows");
  require(axis_scores.cols() >= 1, "adapter needs at least one target axis");
  require(!alphas.empty(), "empty alpha grid");
  require(holdout_frac > 0.0 && holdout_frac < 1.0, "holdout_frac must be in (0, 1)");

  Rng rng(derive_seed(seed, 1));
  std::vector<std::size_t> perm = random_permutation(static_cast<std::size_t>(n), rng);
  int n_hold = static_cast<int>(std::lround(holdout_frac * n));
  n_hold = std::clamp(n_hold, 1, n - 2);
  std::vector<std::size_t> hold_idx(perm.begin(), perm.begin() + n_hold);
  std::vector<std::size_t> train_idx(perm.begin() + n_hold, perm.end());
  std::sort(hold_idx.begin(), hold_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const int n_train = static_cast<int>(train_idx.size());

  const Eigen::Index d = table.hidden.cols();
  const Eigen::Index n_axes = axis_scores.cols();
  Eigen::MatrixXd xtr(n_train, d), ytr(n_train, n_axes);
  for (int i = 0; i < n_train; ++i) {
    xtr.row(i) = table.hidden.row(static_cast<Eigen::Index>(train_idx[static_cast<std::size_t>(i)]));
    ytr.row(i) = axis_scores.row(static_cast<Eigen::Index>(train_idx[static_cast<std::size_t>(i)]));
  }

  Adapter a;
  a.layer = table.layer;
  a.feat_mean = xtr.colwise().mean().transpose();
  a.feat_sd.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var =
        (xtr.col(c).array() - a.feat_mean(c)).square().sum() / std::max(1, n_train - 1);
    const double sd = std::sqrt(var);
    a.feat_sd(c) = sd < kZeroNorm ? 1.0 : sd;
  }
  Eigen::MatrixXd ztr = xtr.rowwise() - a.feat_mean.transpose();
  ztr.array().rowwise() /= a.feat_sd.transpose().array();

  const int k_folds = std::min(5, n_train);
  require(k_folds >= 2, "adapter CV requires at least 2 folds");

  double best_score = -std::numeric_limits<double>::infinity();
  double best_alpha = alphas.front();
  for (double alpha : alphas) {
    double score_sum = 0.0;
    int score_n = 0;
    for (int f = 0; f < k_folds; ++f) {
      std::vector<int> in_rows, out_rows;
      for (int i = 0; i < n_train; ++i) (i % k_folds == f ? out_rows : in_rows).push_back(i);
      Eigen::MatrixXd xin(static_cast<Eigen::Index>(in_rows.size()), d);
      Eigen::MatrixXd yin(static_cast<Eigen::Index>(in_rows.size()), n_axes);
      for (std::size_t i = 0; i < in_rows.size(); ++i) {
        xin.row(static_cast<Eigen::Index>(i)) = ztr.row(in_rows[i]);
        yin.row(static_cast<Eigen::Index>(i)) = ytr.row(in_rows[i]);
      }
      const stats::RidgeFit fit = stats::ridge_solve(xin, yin, alpha, false);
      for (int axis = 0; axis < n_axes; ++axis) {
        double sse = 0.0, sst = 0.0;
        double ymean = 0.0;
        for (int r : out_rows) ymean += ytr(r, axis);
        ymean /= static_cast<double>(out_rows.size());
        for (int r : out_rows) {
          const double pred = ztr.row(r) * fit.weights.col(axis) + fit.intercept(axis);
          sse += (ytr(r, axis) - pred) * (ytr(r, axis) - pred);
          sst += (ytr(r, axis) - ymean) * (ytr(r, axis) - ymean);
        }
        if (sst > kZeroNorm) {
          score_sum += 1.0 - sse / sst;
          ++score_n;
        }
      }
    }
    const double score = score_n > 0 ? score_sum / score_n : 0.0;
    if (score > best_score) {
      best_score = score;
      best_alpha = alpha;
    }
  }

  const stats::RidgeFit final_fit = stats::ridge_solve(ztr, ytr, best_alpha, false);
  a.alpha = best_alpha;
  a.W = final_fit.weights.transpose();
  a.b = final_fit.intercept.transpose();

  for (std::size_t i : hold_idx) a.holdout_word_ids.push_back(table.word_ids[i]);
  Eigen::MatrixXd xho(static_cast<Eigen::Index>(hold_idx.size()), d);
  Eigen::MatrixXd yho(static_cast<Eigen::Index>(hold_idx.size()), n_axes);
  for (std::size_t i = 0; i < hold_idx.size(); ++i) {
    xho.row(static_cast<Eigen::Index>(i)) = table.hidden.row(static_cast<Eigen::Index>(hold_idx[i]));
    yho.row(static_cast<Eigen::Index>(i)) = axis_scores.row(static_cast<Eigen::Index>(hold_idx[i]));
  }
  const Eigen::MatrixXd pred = a.predict_rows(xho);
  for (Eigen::Index axis = 0; axis < n_axes; ++axis) {
    const std::vector<double> p = col_to_vec(pred, axis);
    const std::vector<double> y = col_to_vec(yho, axis);
    a.holdout_r.push_back(stats::pearson_r(p, y));
  }
  return a;
}

SteeringVector brain_axis_vector(const Adapter& a, int k) {
  require(k >= 0 && k < a.n_axes(), "axis index out of range");
  const Eigen::VectorXd raw = a.W.row(k).transpose().cwiseQuotient(a.feat_sd);
  return normalized_vector(raw, "brain_axis(" + std::to_string(k) + ")", a.layer,
                           "brain axis row de-standardizes to a zero vector");
}

SteeringVector actadd_vector(const HiddenTable& table, const std::vector<double>& labels,
                             int n_top) {
  const int n = table.rows();
  require(static_cast<int>(labels.size()) == n, "label count must match hidden table rows");
  require(n_top >= 1, "n_top must be >= 1");
  require(2 * n_top <= n, "need at least 2 * n_top words");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto by_label_then_id = [&](int lhs, int rhs) {
    const double a = labels[static_cast<std::size_t>(lhs)];
    const double b = labels[static_cast<std::size_t>(rhs)];
    if (a != b) return a < b;
    return table.word_ids[static_cast<std::size_t>(lhs)] <
           table.word_ids[static_cast<std::size_t>(rhs)];
  };
  std::sort(order.begin(), order.end(), by_label_then_id);

  Eigen::VectorXd bottom = Eigen::VectorXd::Zero(table.hidden.cols());
  Eigen::VectorXd top = Eigen::VectorXd::Zero(table.hidden.cols());
  for (int i = 0; i < n_top; ++i) {
    bottom += table.hidden.row(order[static_cast<std::size_t>(i)]).transpose();
    top += table.hidden.row(order[static_cast<std::size_t>(n - 1 - i)]).transpose();
  }
  const Eigen::VectorXd diff = (top - bottom) / static_cast<double>(n_top);
  return normalized_vector(diff, "actadd", table.layer,
                           "actadd top/bottom means coincide (zero direction)");
}

SteeringVector random_vector(int d_model, std::uint64_t seed, int layer) {
  require(d_model >= 1, "d_model must be >= 1");
  Rng rng(derive_seed(seed, 0x52AD));
  Eigen::VectorXd dir(d_model);
  do {
    for (int i = 0; i < d_model; ++i) dir(i) = rng.normal();
  } while (dir.norm() < kZeroNorm);
  return normalized_vector(dir, "random(" + std::to_string(seed) + ")", layer, "unreachable");
}

SteeringVector text_probe_vector(const HiddenTable& table, const std::vector<double>& labels,
                                 const std::string& label_name, const std::vector<double>& alphas,
                                 double holdout_frac, std::uint64_t seed) {
  require(static_cast<int>(labels.size()) == table.rows(),
          "label count must match hidden table rows");
  Eigen::MatrixXd y(table.rows(), 1);
  for (int i = 0; i < table.rows(); ++i) y(i, 0) = labels[static_cast<std::size_t>(i)];
  const Adapter probe = fit_adapter(table, y, alphas, holdout_frac, seed);
  const Eigen::VectorXd raw = probe.W.row(0).transpose().cwiseQuotient(probe.feat_sd);
  return normalized_vector(raw, "text_probe(" + label_name + ")", table.layer,
                           "text probe de-standardizes to a zero vector");
}

void save_adapter(const std::string& path_base, const Adapter& a) {
  TensorArchive arch;
  arch.add("W", a.W);
  arch.add("b", a.b);
  arch.add("feat_mean", a.feat_mean);
  arch.add("feat_sd", a.feat_sd);
  arch.add("holdout_r", a.holdout_r);
  std::vector<double> ids(a.holdout_word_ids.begin(), a.holdout_word_ids.end());
  arch.add("holdout_word_ids", ids);
  arch.meta()["layer"] = std::to_string(a.layer);
  arch.meta()["alpha"] = format_g17(a.alpha);
  arch.save(path_base + ".naxt");

  nlohmann::json manifest;
  manifest["layer"] = a.layer;
  manifest["alpha"] = a.alpha;
  manifest["fit_report"] = {{"holdout_r", a.holdout_r},
                            {"holdout_word_ids", a.holdout_word_ids},
                            {"n_holdout", a.holdout_word_ids.size()}};
  std::ofstream f(path_base + ".json", std::ios::trunc);
  if (!f) throw_io("cannot write adapter manifest: " + path_base + ".json");
  f << manifest.dump(2) << "\n";
}

Adapter load_adapter(const std::string& path_base) {
  TensorArchive arch = TensorArchive::load(path_base + ".naxt");
  Adapter a;
  a.W = arch.matrix("W");
  a.b = arch.vector("b");
  a.feat_mean = arch.vector("feat_mean");
  a.feat_sd = arch.vector("feat_sd");
  const Eigen::VectorXd hr = arch.vector("holdout_r");
  for (Eigen::Index i = 0; i < hr.size(); ++i) a.holdout_r.push_back(hr(i));
  const Eigen::VectorXd ids = arch.vector("holdout_word_ids");
  for (Eigen::Index i = 0; i < ids.size(); ++i)
    a.holdout_word_ids.push_back(static_cast<int>(std::lround(ids(i))));
  a.layer = std::stoi(arch.meta().at("layer"));
  a.alpha = std::stod(arch.meta().at("alpha"));
  return a;
}

void save_vector_json(const std::string& path, const SteeringVector& v) {
  nlohmann::json j;
  j["direction"] = std::vector<double>(v.direction.data(), v.direction.data() + v.direction.size());
  j["provenance"] = v.provenance;
  j["layer"] = v.layer;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw_io("cannot write steering vector: " + path);
  f << j.dump(2) << "\n";
}

SteeringVector load_vector_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_io("cannot read steering vector: " + path);
  nlohmann::json j;
  f >> j;
  SteeringVector v;
  const std::vector<double> dir = j.at("direction").get<std::vector<double>>();
  v.direction = Eigen::Map<const Eigen::VectorXd>(dir.data(), static_cast<Eigen::Index>(dir.size()));
  v.provenance = j.at("provenance").get<std::string>();
  v.layer = j.at("layer").get<int>();
  return v;
}

}  // namespace neuraxis::adapter
