#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "neuraxis/synth.hpp"

namespace neuraxis::model {

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int context_len = 128;
  std::uint64_t seed = 1;

  void validate() const;
};

// Hidden-state index convention: state 0 is the embedding output; state k
// (1-based) is the residual stream after block k. Steering at layer k adds
// strength * direction to state k at every position before block k+1 runs.
struct SteerSpec {
  int layer = 0;
  Eigen::VectorXd direction;
  double strength = 0.0;
};

struct HiddenTrace {
  std::vector<Eigen::MatrixXd> states;  // n_layers+1 entries, each seq_len x d_model
};

// Parameters live in one flat vector; named tensors are column-major views
// into it. The output head is weight-tied to tok_emb.
class ModelWeights {
 public:
  ModelWeights() = default;
  explicit ModelWeights(const ModelConfig& cfg);  // seeded init from cfg.seed

  const ModelConfig& config() const { return cfg_; }
  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  Eigen::Map<Eigen::MatrixXd> tensor(const std::string& name);
  Eigen::Map<const Eigen::MatrixXd> tensor(const std::string& name) const;
  std::vector<std::string> tensor_names() const;

  bool finite() const { return flat_.allFinite(); }

 private:
  struct Desc {
    std::string name;
    Eigen::Index offset = 0, rows = 0, cols = 0;
  };
  void build_layout();
  const Desc& find(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<Desc> layout_;
  Eigen::VectorXd flat_;
};

struct ForwardResult {
  Eigen::MatrixXd logits;  // seq_len x vocab_size
  HiddenTrace trace;
};

ForwardResult forward(const ModelWeights& w, const std::vector<int>& tokens,
                      const std::optional<SteerSpec>& steer = std::nullopt,
                      bool want_trace = true);

struct TrainSpec {
  int batch_size = 16;
  int n_steps = 1500;
  double lr = 3e-3;
  int warmup_steps = 50;
  double grad_clip = 1.0;
  double val_frac = 0.1;
  int eval_every = 200;
  std::uint64_t seed = 1;
};

struct TrainReport {
  std::vector<std::pair<int, double>> loss_history;  // (step, train loss)
  double val_ppl = 0.0;
  double unigram_ppl = 0.0;
  bool diverged = false;
  int diverged_step = -1;
};

// Adam on next-token cross-entropy. Divergence (non-finite loss) rolls back
// to the last finite checkpoint and flags the report instead of throwing.
std::pair<ModelWeights, TrainReport> train_toy_lm(const synth::Corpus& corpus,
                                                  const ModelConfig& cfg,
                                                  const TrainSpec& spec);

struct GenResult {
  std::vector<int> tokens;  // generated continuation only
  bool truncated = false;   // sliding-window context truncation occurred
};

GenResult generate(const ModelWeights& w, const std::vector<int>& prompt, int n_tokens,
                   double temperature, std::uint64_t seed,
                   const std::optional<SteerSpec>& steer = std::nullopt);

// exp(mean next-token NLL); tokens are scored in successive context_len
// chunks, each chunk conditioned only on itself.
double perplexity(const ModelWeights& w, const std::vector<int>& tokens);

// Cross-entropy loss and flat-parameter gradient over a batch of sequences;
// exposed for the finite-difference oracle.
double loss_and_grad(const ModelWeights& w, const std::vector<std::vector<int>>& batch,
                     Eigen::VectorXd& grad);

void save_weights(const std::string& path, const ModelWeights& w);
ModelWeights load_weights(const std::string& path);

}  // namespace neuraxis::model
