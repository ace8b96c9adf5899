#include "neuraxis/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "neuraxis/error.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/tensor_archive.hpp"

namespace neuraxis::model {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double z = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(z));
}

double gelu_grad(double x) {
  const double z = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(z);
  const double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Row-wise layer norm; returns y and fills xhat and inv_sigma for backward.
Eigen::MatrixXd ln_forward(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& b, Eigen::MatrixXd& xhat,
                           Eigen::VectorXd& inv_sigma) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  xhat.resize(rows, d);
  inv_sigma.resize(rows);
  Eigen::MatrixXd y(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    inv_sigma(r) = is;
    xhat.row(r) = (x.row(r).array() - mu) * is;
    y.row(r) = xhat.row(r).cwiseProduct(g.transpose()) + b.transpose();
  }
  return y;
}

void ln_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                 const Eigen::VectorXd& inv_sigma, const Eigen::VectorXd& g, Eigen::MatrixXd& dx,
                 Eigen::VectorXd& dg, Eigen::VectorXd& db) {
  const Eigen::Index rows = dy.rows(), d = dy.cols();
  dx.resize(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::RowVectorXd rr = dy.row(r).cwiseProduct(g.transpose());
    const double mean_r = rr.mean();
    const double mean_rx = rr.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = inv_sigma(r) * (rr.array() - mean_r - xhat.row(r).array() * mean_rx);
    dg += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    db += dy.row(r).transpose();
  }
}

struct BlockCache {
  Eigen::MatrixXd h_in;
  Eigen::MatrixXd xhat1, a;  // ln1
  Eigen::VectorXd is1;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> probs;  // per head, T x T
  Eigen::MatrixXd concat;
  Eigen::MatrixXd h_mid;
  Eigen::MatrixXd xhat2, m;  // ln2
  Eigen::VectorXd is2;
  Eigen::MatrixXd u, gact;  // ffn pre/post activation
};

struct SeqCache {
  Eigen::MatrixXd x0;  // embedding output
  std::vector<BlockCache> blocks;
  Eigen::MatrixXd h_final, xhatf;
  Eigen::VectorXd isf;
  Eigen::MatrixXd logits;
};

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
  for (int t : tokens)
    require(t >= 0 && t < cfg.vocab_size, "token id out of vocabulary range");
}

// Full forward pass; fills cache when requested (training), trace when
// requested (analysis). Steering adds strength*direction to hidden state k
// at every position.
void forward_impl(const ModelWeights& w, const std::vector<int>& tokens,
                  const std::optional<SteerSpec>& steer, SeqCache* cache, HiddenTrace* trace,
                  Eigen::MatrixXd& logits_out) {
  const ModelConfig& cfg = w.config();
  const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
  require(T >= 1, "forward: empty token sequence");
  require(T <= cfg.context_len, "forward: sequence exceeds context length");
  check_tokens(cfg, tokens);
  if (steer.has_value()) {
    require(steer->layer >= 0 && steer->layer <= cfg.n_layers, "steer layer out of range");
    require(steer->direction.size() == cfg.d_model, "steer direction dimension mismatch");
  }
  const bool steering = steer.has_value() && steer->strength != 0.0;

  const auto emb = w.tensor("tok_emb");
  const auto pos = w.tensor("pos_emb");
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::MatrixXd h(T, d);
  for (Eigen::Index t = 0; t < T; ++t)
    h.row(t) = emb.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);
  if (steering && steer->layer == 0)
    h.rowwise() += (steer->strength * steer->direction).transpose();
  if (cache) cache->x0 = h;
  if (trace) {
    trace->states.clear();
    trace->states.push_back(h);
  }

  if (cache) cache->blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blk" + std::to_string(l) + ".";
    BlockCache local;
    BlockCache& bc = cache ? cache->blocks[static_cast<std::size_t>(l)] : local;
    bc.h_in = h;

    const Eigen::VectorXd ln1_g = w.tensor(p + "ln1_g").col(0);
    const Eigen::VectorXd ln1_b = w.tensor(p + "ln1_b").col(0);
    bc.a = ln_forward(h, ln1_g, ln1_b, bc.xhat1, bc.is1);

    bc.q = bc.a * w.tensor(p + "wq");
    bc.k = bc.a * w.tensor(p + "wk");
    bc.v = bc.a * w.tensor(p + "wv");

    bc.concat.resize(T, d);
    bc.probs.assign(static_cast<std::size_t>(nh), Eigen::MatrixXd());
    for (int hh = 0; hh < nh; ++hh) {
      const auto qh = bc.q.middleCols(hh * dh, dh);
      const auto kh = bc.k.middleCols(hh * dh, dh);
      const auto vh = bc.v.middleCols(hh * dh, dh);
      Eigen::MatrixXd s = (qh * kh.transpose()) * scale;
      Eigen::MatrixXd prob(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          prob(i, j) = std::exp(s(i, j) - mx);
          z += prob(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) prob(i, j) /= z;
        for (Eigen::Index j = i + 1; j < T; ++j) prob(i, j) = 0.0;
      }
      bc.concat.middleCols(hh * dh, dh) = prob * vh;
      bc.probs[static_cast<std::size_t>(hh)] = std::move(prob);
    }
    h += bc.concat * w.tensor(p + "wo");
    bc.h_mid = h;

    const Eigen::VectorXd ln2_g = w.tensor(p + "ln2_g").col(0);
    const Eigen::VectorXd ln2_b = w.tensor(p + "ln2_b").col(0);
    bc.m = ln_forward(h, ln2_g, ln2_b, bc.xhat2, bc.is2);

    bc.u = bc.m * w.tensor(p + "w1");
    bc.u.rowwise() += w.tensor(p + "b1").col(0).transpose();
    bc.gact = bc.u.unaryExpr([](double x) { return gelu(x); });
    Eigen::MatrixXd ff = bc.gact * w.tensor(p + "w2");
    ff.rowwise() += w.tensor(p + "b2").col(0).transpose();
    h += ff;

    if (steering && steer->layer == l + 1)
      h.rowwise() += (steer->strength * steer->direction).transpose();
    if (trace) trace->states.push_back(h);
  }

  Eigen::MatrixXd xhatf;
  Eigen::VectorXd isf;
  const Eigen::VectorXd lnf_g = w.tensor("ln_f_g").col(0);
  const Eigen::VectorXd lnf_b = w.tensor("ln_f_b").col(0);
  const Eigen::MatrixXd f = ln_forward(h, lnf_g, lnf_b, xhatf, isf);
  logits_out.noalias() = f * emb.transpose();
  if (cache) {
    cache->h_final = h;
    cache->xhatf = std::move(xhatf);
    cache->isf = std::move(isf);
    cache->logits = logits_out;
  }
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1,
          "model dimensions must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(context_len >= 2, "context_len must be >= 2");
}

ModelWeights::ModelWeights(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  build_layout();
  Rng rng(derive_seed(cfg_.seed, 0xA11CE));
  for (Eigen::Index i = 0; i < flat_.size(); ++i) flat_(i) = 0.02 * rng.normal();
  for (const auto& desc : layout_) {
    const bool gain = desc.name.find("_g") == desc.name.size() - 2;
    const bool bias = desc.name.find("_b") == desc.name.size() - 2 ||
                      desc.name.find(".b1") != std::string::npos ||
                      desc.name.find(".b2") != std::string::npos;
    if (gain)
      flat_.segment(desc.offset, desc.rows * desc.cols).setOnes();
    else if (bias)
      flat_.segment(desc.offset, desc.rows * desc.cols).setZero();
  }
}

void ModelWeights::build_layout() {
  layout_.clear();
  Eigen::Index off = 0;
  auto add = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    layout_.push_back({name, off, r, c});
    off += r * c;
  };
  add("tok_emb", cfg_.vocab_size, cfg_.d_model);
  add("pos_emb", cfg_.context_len, cfg_.d_model);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "blk" + std::to_string(l) + ".";
    add(p + "ln1_g", cfg_.d_model, 1);
    add(p + "ln1_b", cfg_.d_model, 1);
    add(p + "wq", cfg_.d_model, cfg_.d_model);
    add(p + "wk", cfg_.d_model, cfg_.d_model);
    add(p + "wv", cfg_.d_model, cfg_.d_model);
    add(p + "wo", cfg_.d_model, cfg_.d_model);
    add(p + "ln2_g", cfg_.d_model, 1);
    add(p + "ln2_b", cfg_.d_model, 1);
    add(p + "w1", cfg_.d_model, cfg_.d_ff);
    add(p + "b1", cfg_.d_ff, 1);
    add(p + "w2", cfg_.d_ff, cfg_.d_model);
    add(p + "b2", cfg_.d_model, 1);
  }
  add("ln_f_g", cfg_.d_model, 1);
  add("ln_f_b", cfg_.d_model, 1);
  flat_.setZero(off);
}

const ModelWeights::Desc& ModelWeights::find(const std::string& name) const {
  for (const auto& d : layout_)
    if (d.name == name) return d;
  throw_invalid("unknown tensor: " + name);
}

Eigen::Map<Eigen::MatrixXd> ModelWeights::tensor(const std::string& name) {
  const Desc& d = find(name);
  return {flat_.data() + d.offset, d.rows, d.cols};
}

Eigen::Map<const Eigen::MatrixXd> ModelWeights::tensor(const std::string& name) const {
  const Desc& d = find(name);
  return {flat_.data() + d.offset, d.rows, d.cols};
}

std::vector<std::string> ModelWeights::tensor_names() const {
  std::vector<std::string> names;
  for (const auto& d : layout_) names.push_back(d.name);
  return names;
}

ForwardResult forward(const ModelWeights& w, const std::vector<int>& tokens,
                      const std::optional<SteerSpec>& steer, bool want_trace) {
  ForwardResult res;
  HiddenTrace trace;
  forward_impl(w, tokens, steer, nullptr, want_trace ? &trace : nullptr, res.logits);
  if (want_trace) res.trace = std::move(trace);
  return res;
}

double loss_and_grad(const ModelWeights& w, const std::vector<std::vector<int>>& batch,
                     Eigen::VectorXd& grad) {
  const ModelConfig& cfg = w.config();
  require(!batch.empty(), "loss_and_grad: empty batch");

  ModelWeights gw = w;
  gw.flat().setZero();

  std::int64_t n_pred = 0;
  for (const auto& seq : batch) {
    require(seq.size() >= 2, "loss_and_grad: sequence shorter than 2 tokens");
    n_pred += static_cast<std::int64_t>(seq.size()) - 1;
  }

  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double loss_sum = 0.0;

  for (const auto& seq : batch) {
    SeqCache cache;
    Eigen::MatrixXd logits;
    forward_impl(w, seq, std::nullopt, &cache, nullptr, logits);
    const Eigen::Index T = static_cast<Eigen::Index>(seq.size());

    // Softmax cross-entropy on positions 0..T-2 predicting the next token.
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(T, cfg.vocab_size);
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      const int target = seq[static_cast<std::size_t>(t) + 1];
      const double mx = logits.row(t).maxCoeff();
      const Eigen::RowVectorXd ex = (logits.row(t).array() - mx).exp();
      const double z = ex.sum();
      loss_sum += -(logits(t, target) - mx - std::log(z));
      dlogits.row(t) = ex / z;
      dlogits(t, target) -= 1.0;
    }
    dlogits /= static_cast<double>(n_pred);

    const auto emb = w.tensor("tok_emb");
    auto demb = gw.tensor("tok_emb");
    auto dpos = gw.tensor("pos_emb");

    // Head (tied to tok_emb): logits = f * emb^T with f = ln_f(h_final).
    Eigen::MatrixXd f =
        (cache.xhatf.array().rowwise() * w.tensor("ln_f_g").col(0).transpose().array()).matrix();
    f.rowwise() += w.tensor("ln_f_b").col(0).transpose();
    const Eigen::MatrixXd df = dlogits * emb;
    demb.noalias() += dlogits.transpose() * f;

    Eigen::MatrixXd dh_state;
    {
      Eigen::VectorXd dg = Eigen::VectorXd::Zero(d), db = Eigen::VectorXd::Zero(d);
      ln_backward(df, cache.xhatf, cache.isf, w.tensor("ln_f_g").col(0), dh_state, dg, db);
      gw.tensor("ln_f_g").col(0) += dg;
      gw.tensor("ln_f_b").col(0) += db;
    }

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
      const std::string p = "blk" + std::to_string(l) + ".";
      const BlockCache& bc = cache.blocks[static_cast<std::size_t>(l)];

      // FFN branch: h = h_mid + gelu(ln2(h_mid) W1 + b1) W2 + b2.
      const Eigen::MatrixXd dff = dh_state;
      gw.tensor(p + "w2").noalias() += bc.gact.transpose() * dff;
      gw.tensor(p + "b2").col(0) += dff.colwise().sum().transpose();
      Eigen::MatrixXd dgact = dff * w.tensor(p + "w2").transpose();
      Eigen::MatrixXd du =
          dgact.cwiseProduct(bc.u.unaryExpr([](double x) { return gelu_grad(x); }));
      gw.tensor(p + "w1").noalias() += bc.m.transpose() * du;
      gw.tensor(p + "b1").col(0) += du.colwise().sum().transpose();
      const Eigen::MatrixXd dm = du * w.tensor(p + "w1").transpose();

      Eigen::MatrixXd dh_mid;
      {
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(d), db = Eigen::VectorXd::Zero(d);
        ln_backward(dm, bc.xhat2, bc.is2, w.tensor(p + "ln2_g").col(0), dh_mid, dg, db);
        gw.tensor(p + "ln2_g").col(0) += dg;
        gw.tensor(p + "ln2_b").col(0) += db;
      }
      dh_mid += dh_state;  // residual

      // Attention branch: h_mid = h_in + concat * Wo.
      gw.tensor(p + "wo").noalias() += bc.concat.transpose() * dh_mid;
      const Eigen::MatrixXd dconcat = dh_mid * w.tensor(p + "wo").transpose();

      Eigen::MatrixXd dq(T, d), dk(T, d), dv(T, d);
      for (int hh = 0; hh < nh; ++hh) {
        const auto qh = bc.q.middleCols(hh * dh, dh);
        const auto kh = bc.k.middleCols(hh * dh, dh);
        const auto vh = bc.v.middleCols(hh * dh, dh);
        const auto dout = dconcat.middleCols(hh * dh, dh);
        const Eigen::MatrixXd& prob = bc.probs[static_cast<std::size_t>(hh)];

        dv.middleCols(hh * dh, dh).noalias() = prob.transpose() * dout;
        Eigen::MatrixXd dprob = dout * vh.transpose();
        Eigen::MatrixXd ds(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
          const double dot = dprob.row(i).cwiseProduct(prob.row(i)).sum();
          ds.row(i) = prob.row(i).cwiseProduct((dprob.row(i).array() - dot).matrix());
        }
        dq.middleCols(hh * dh, dh).noalias() = ds * kh * scale;
        dk.middleCols(hh * dh, dh).noalias() = ds.transpose() * qh * scale;
      }
      gw.tensor(p + "wq").noalias() += bc.a.transpose() * dq;
      gw.tensor(p + "wk").noalias() += bc.a.transpose() * dk;
      gw.tensor(p + "wv").noalias() += bc.a.transpose() * dv;
      const Eigen::MatrixXd da = dq * w.tensor(p + "wq").transpose() +
                                 dk * w.tensor(p + "wk").transpose() +
                                 dv * w.tensor(p + "wv").transpose();

      Eigen::MatrixXd dh_in;
      {
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(d), db = Eigen::VectorXd::Zero(d);
        ln_backward(da, bc.xhat1, bc.is1, w.tensor(p + "ln1_g").col(0), dh_in, dg, db);
        gw.tensor(p + "ln1_g").col(0) += dg;
        gw.tensor(p + "ln1_b").col(0) += db;
      }
      dh_state = dh_in + dh_mid;  // residual into the block input
    }

    for (Eigen::Index t = 0; t < T; ++t) {
      demb.row(seq[static_cast<std::size_t>(t)]) += dh_state.row(t);
      dpos.row(t) += dh_state.row(t);
    }
  }

  grad = gw.flat();
  return loss_sum / static_cast<double>(n_pred);
}

std::pair<ModelWeights, TrainReport> train_toy_lm(const synth::Corpus& corpus,
                                                  const ModelConfig& cfg,
                                                  const TrainSpec& spec) {
  cfg.validate();
  require(spec.batch_size >= 1 && spec.n_steps >= 1, "train: bad batch/step counts");
  require(spec.val_frac > 0.0 && spec.val_frac < 0.9, "train: val_frac out of range");

  std::int64_t total_tokens = 0;
  for (const auto& s : corpus.sequences) total_tokens += static_cast<std::int64_t>(s.size());
  require(total_tokens >= 50000, "train: corpus token count must be >= 50k");

  std::vector<std::vector<int>> seqs;
  for (const auto& s : corpus.sequences) {
    std::vector<int> t = s;
    if (static_cast<int>(t.size()) > cfg.context_len)
      t.resize(static_cast<std::size_t>(cfg.context_len));
    require(t.size() >= 2, "train: sequence shorter than 2 tokens");
    check_tokens(cfg, t);
    seqs.push_back(std::move(t));
  }
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                         std::lround(spec.val_frac * seqs.size())));
  require(seqs.size() > n_val, "train: no training sequences left after validation split");
  const std::size_t n_train = seqs.size() - n_val;

  ModelWeights w(cfg);
  TrainReport report;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(w.flat().size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(w.flat().size());
  Eigen::VectorXd grad;
  Eigen::VectorXd ckpt = w.flat();
  Rng rng(derive_seed(spec.seed, 0xAD));
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (int step = 1; step <= spec.n_steps; ++step) {
    std::vector<std::vector<int>> batch;
    for (int b = 0; b < spec.batch_size; ++b)
      batch.push_back(seqs[static_cast<std::size_t>(rng.below(n_train))]);
    const double loss = loss_and_grad(w, batch, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      w.flat() = ckpt;
      report.diverged = true;
      report.diverged_step = step;
      break;
    }
    const double gnorm = grad.norm();
    if (gnorm > spec.grad_clip) grad *= spec.grad_clip / gnorm;
    const double lr =
        spec.lr * std::min(1.0, static_cast<double>(step) /
                                    static_cast<double>(std::max(1, spec.warmup_steps)));
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    w.flat() -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + adam_eps).matrix());

    if (step == 1 || step % spec.eval_every == 0 || step == spec.n_steps) {
      report.loss_history.emplace_back(step, loss);
      ckpt = w.flat();
    }
  }

  // Validation perplexity and add-one-smoothed unigram baseline.
  double nll = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = n_train; i < seqs.size(); ++i) {
    Eigen::MatrixXd logits;
    forward_impl(w, seqs[i], std::nullopt, nullptr, nullptr, logits);
    for (std::size_t t = 0; t + 1 < seqs[i].size(); ++t) {
      const Eigen::Index ti = static_cast<Eigen::Index>(t);
      const double mx = logits.row(ti).maxCoeff();
      const double z = (logits.row(ti).array() - mx).exp().sum();
      nll += -(logits(ti, seqs[i][t + 1]) - mx - std::log(z));
      ++count;
    }
  }
  report.val_ppl = std::exp(nll / static_cast<double>(count));

  std::vector<double> uni(static_cast<std::size_t>(cfg.vocab_size), 1.0);
  double uni_total = static_cast<double>(cfg.vocab_size);
  for (std::size_t i = 0; i < n_train; ++i)
    for (int t : seqs[i]) {
      uni[static_cast<std::size_t>(t)] += 1.0;
      uni_total += 1.0;
    }
  double uni_nll = 0.0;
  std::int64_t uni_count = 0;
  for (std::size_t i = n_train; i < seqs.size(); ++i)
    for (std::size_t t = 1; t < seqs[i].size(); ++t) {
      uni_nll += -std::log(uni[static_cast<std::size_t>(seqs[i][t])] / uni_total);
      ++uni_count;
    }
  report.unigram_ppl = std::exp(uni_nll / static_cast<double>(uni_count));
  return {std::move(w), std::move(report)};
}

namespace {

// Incremental KV-cache decoder shared by generate().
class Decoder {
 public:
  Decoder(const ModelWeights& w, const std::optional<SteerSpec>& steer)
      : w_(w), steer_(steer), cfg_(w.config()) {
    if (steer_.has_value()) {
      require(steer_->layer >= 0 && steer_->layer <= cfg_.n_layers, "steer layer out of range");
      require(steer_->direction.size() == cfg_.d_model, "steer direction dimension mismatch");
    }
    kcache_.assign(static_cast<std::size_t>(cfg_.n_layers),
                   Eigen::MatrixXd(cfg_.context_len, cfg_.d_model));
    vcache_ = kcache_;
  }

  // Appends one token and returns the logits row for it.
  Eigen::RowVectorXd step(int token) {
    const bool steering = steer_.has_value() && steer_->strength != 0.0;
    const int d = cfg_.d_model;
    const int nh = cfg_.n_heads;
    const int dh = d / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index pos = len_;

    Eigen::RowVectorXd h =
        w_.tensor("tok_emb").row(token) + w_.tensor("pos_emb").row(pos);
    if (steering && steer_->layer == 0) h += (steer_->strength * steer_->direction).transpose();

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "blk" + std::to_string(l) + ".";
      Eigen::MatrixXd xhat;
      Eigen::VectorXd is;
      const Eigen::RowVectorXd a =
          ln_forward(h, w_.tensor(p + "ln1_g").col(0), w_.tensor(p + "ln1_b").col(0), xhat, is);
      const Eigen::RowVectorXd q = a * w_.tensor(p + "wq");
      const Eigen::RowVectorXd k = a * w_.tensor(p + "wk");
      const Eigen::RowVectorXd vv = a * w_.tensor(p + "wv");

      auto& K = kcache_[static_cast<std::size_t>(l)];
      auto& V = vcache_[static_cast<std::size_t>(l)];
      K.row(len_) = k;
      V.row(len_) = vv;

      Eigen::RowVectorXd attn(d);
      for (int hh = 0; hh < nh; ++hh) {
        const auto kh = K.topRows(len_ + 1).middleCols(hh * dh, dh);
        const auto vh = V.topRows(len_ + 1).middleCols(hh * dh, dh);
        Eigen::VectorXd s = (kh * q.middleCols(hh * dh, dh).transpose()) * scale;
        const double mx = s.maxCoeff();
        Eigen::VectorXd e = (s.array() - mx).exp();
        e /= e.sum();
        attn.middleCols(hh * dh, dh) = (e.transpose() * vh);
      }
      h += attn * w_.tensor(p + "wo");

      const Eigen::RowVectorXd m =
          ln_forward(h, w_.tensor(p + "ln2_g").col(0), w_.tensor(p + "ln2_b").col(0), xhat, is);
      Eigen::RowVectorXd u = m * w_.tensor(p + "w1") + w_.tensor(p + "b1").col(0).transpose();
      const Eigen::RowVectorXd g = u.unaryExpr([](double x) { return gelu(x); });
      h += (g * w_.tensor(p + "w2") + w_.tensor(p + "b2").col(0).transpose()).eval();

      if (steering && steer_->layer == l + 1)
        h += (steer_->strength * steer_->direction).transpose();
    }

    Eigen::MatrixXd xhat;
    Eigen::VectorXd is;
    const Eigen::RowVectorXd f =
        ln_forward(h, w_.tensor("ln_f_g").col(0), w_.tensor("ln_f_b").col(0), xhat, is);
    ++len_;
    window_.push_back(token);
    return f * w_.tensor("tok_emb").transpose();
  }

  // Keeps the most recent keep_n tokens; replays them to rebuild caches.
  Eigen::RowVectorXd rebuild(int keep_n) {
    std::vector<int> kept(window_.end() - keep_n, window_.end());
    window_.clear();
    len_ = 0;
    Eigen::RowVectorXd logits;
    for (int t : kept) logits = step(t);
    return logits;
  }

  Eigen::Index len() const { return len_; }

 private:
  const ModelWeights& w_;
  std::optional<SteerSpec> steer_;
  ModelConfig cfg_;
  std::vector<Eigen::MatrixXd> kcache_, vcache_;
  std::vector<int> window_;
  Eigen::Index len_ = 0;
};

}  // namespace

GenResult generate(const ModelWeights& w, const std::vector<int>& prompt, int n_tokens,
                   double temperature, std::uint64_t seed,
                   const std::optional<SteerSpec>& steer) {
  const ModelConfig& cfg = w.config();
  require(!prompt.empty(), "generate: empty prompt");
  require(n_tokens >= 1, "generate: n_tokens must be >= 1");
  require(temperature >= 0.0, "generate: negative temperature");
  check_tokens(cfg, prompt);

  GenResult res;
  Decoder dec(w, steer);
  // Hysteresis margin: rebuild drops this many extra tokens so the sliding
  // window is not reconstructed on every step.
  const int margin = std::min(16, cfg.context_len / 4);

  std::vector<int> fed = prompt;
  if (static_cast<int>(fed.size()) > cfg.context_len) {
    fed.erase(fed.begin(), fed.end() - cfg.context_len);
    res.truncated = true;
  }
  Eigen::RowVectorXd logits;
  for (int t : fed) logits = dec.step(t);

  Rng rng(derive_seed(seed, 0x6E47));
  for (int i = 0; i < n_tokens; ++i) {
    int next;
    if (temperature <= 1e-12) {
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      next = static_cast<int>(arg);
    } else {
      Eigen::RowVectorXd scaled = logits / temperature;
      const double mx = scaled.maxCoeff();
      Eigen::RowVectorXd probs = (scaled.array() - mx).exp();
      probs /= probs.sum();
      const double u = rng.uniform();
      double acc = 0.0;
      next = cfg.vocab_size - 1;
      for (int k = 0; k < cfg.vocab_size; ++k) {
        acc += probs(k);
        if (u < acc) {
          next = k;
          break;
        }
      }
    }
    res.tokens.push_back(next);
    if (i + 1 == n_tokens) break;
    if (dec.len() >= cfg.context_len) {
      res.truncated = true;
      dec.rebuild(cfg.context_len - margin);
    }
    logits = dec.step(next);
  }
  return res;
}

double perplexity(const ModelWeights& w, const std::vector<int>& tokens) {
  const ModelConfig& cfg = w.config();
  require(tokens.size() >= 2, "perplexity: need at least 2 tokens");
  check_tokens(cfg, tokens);

  double nll = 0.0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start + 1 < tokens.size();
       start += static_cast<std::size_t>(cfg.context_len)) {
    const std::size_t len =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.context_len), tokens.size() - start);
    if (len < 2) break;
    const std::vector<int> chunk(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                 tokens.begin() + static_cast<std::ptrdiff_t>(start + len));
    Eigen::MatrixXd logits;
    forward_impl(w, chunk, std::nullopt, nullptr, nullptr, logits);
    for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
      const Eigen::Index ti = static_cast<Eigen::Index>(t);
      const double mx = logits.row(ti).maxCoeff();
      const double z = (logits.row(ti).array() - mx).exp().sum();
      nll += -(logits(ti, chunk[t + 1]) - mx - std::log(z));
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

void save_weights(const std::string& path, const ModelWeights& w) {
  require(w.finite(), "save_weights: non-finite parameters");
  TensorArchive a;
  for (const auto& name : w.tensor_names()) a.add(name, Eigen::MatrixXd(w.tensor(name)));
  const ModelConfig& c = w.config();
  a.meta()["vocab_size"] = std::to_string(c.vocab_size);
  a.meta()["d_model"] = std::to_string(c.d_model);
  a.meta()["n_layers"] = std::to_string(c.n_layers);
  a.meta()["n_heads"] = std::to_string(c.n_heads);
  a.meta()["d_ff"] = std::to_string(c.d_ff);
  a.meta()["context_len"] = std::to_string(c.context_len);
  a.meta()["seed"] = std::to_string(c.seed);
  a.save(path);
}

ModelWeights load_weights(const std::string& path) {
  TensorArchive a = TensorArchive::load(path);
  ModelConfig c;
  c.vocab_size = std::stoi(a.meta().at("vocab_size"));
  c.d_model = std::stoi(a.meta().at("d_model"));
  c.n_layers = std::stoi(a.meta().at("n_layers"));
  c.n_heads = std::stoi(a.meta().at("n_heads"));
  c.d_ff = std::stoi(a.meta().at("d_ff"));
  c.context_len = std::stoi(a.meta().at("context_len"));
  c.seed = std::stoull(a.meta().at("seed"));
  ModelWeights w(c);
  for (const auto& name : w.tensor_names()) {
    const Eigen::MatrixXd t = a.matrix(name);
    require(t.rows() == w.tensor(name).rows() && t.cols() == w.tensor(name).cols(),
            "load_weights: shape mismatch for " + name);
    w.tensor(name) = t;
  }
  require(w.finite(), "load_weights: non-finite parameters");
  return w;
}

}  // namespace neuraxis::model
