#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neuraxis/signal.hpp"

namespace neuraxis::synth {

struct SynthSpec {
  int n_subjects = 4;
  int n_runs = 6;
  int n_channels = 24;
  double sfreq = 120.0;
  double duration_s = 300.0;
  std::pair<double, double> band{4.0, 8.0};
  int n_latent_axes = 3;
  double word_rate = 2.0;
  int vocab_size = 500;
  std::uint64_t seed = 1;
  double coupling_gain = 1.5;

  void validate() const;
};

struct WordEvent {
  double onset = 0.0;
  double offset = 0.0;
  int word_id = 0;
  std::string token;
  double logfreq = 0.0;
  int pos_id = 0;
  double emb_change = 0.0;
};

// Per-word-type labels; vectors indexed by word_id.
struct LabelTables {
  std::vector<std::string> token;
  std::vector<double> logfreq;
  std::vector<int> pos_id;
  std::vector<double> emb_change;
  std::vector<int> is_function;
  std::vector<int> animate;
  std::vector<double> concreteness;

  int size() const { return static_cast<int>(token.size()); }
};

inline constexpr int kFeatureEmbChange = 0;
inline constexpr int kFeatureLogfreq = 1;
inline constexpr int kFeatureFuncContent = 2;
inline constexpr int kVocabFeatureCount = 3;
// pos_id convention: ids 0..3 are content classes (0 = noun), 4..7 function classes.
inline constexpr int kPosNoun = 0;
const char* feature_name(int feature_id);

struct PlantedTruth {
  // Loadings live in the uncompressed edge space (lexicographic pair order).
  Eigen::MatrixXd axis_loadings;                // n_latent_axes x n_edges
  Eigen::MatrixXd word_axis_scores;             // vocab x n_latent_axes, z-scored
  std::vector<int> feature_axis_map;            // axis -> feature id
  std::vector<std::vector<int>> axis_channels;  // channels carrying each axis
};

struct Corpus {
  std::vector<std::vector<int>> sequences;
  int vocab_size = 0;  // word ids are < vocab_size
  int bos_id = 0;      // == vocab_size
  bool empty_flag = false;
};

LabelTables gen_vocabulary(const SynthSpec& spec);

// Word stream for one run; the stream depends on (spec.seed, run_index) only,
// so all subjects share it. Returns the events plus the label tables.
std::pair<std::vector<WordEvent>, LabelTables> gen_word_stream(const SynthSpec& spec,
                                                               int run_index = 0);

PlantedTruth make_planted_truth(const SynthSpec& spec, const LabelTables& vocab);

signal::Recording gen_recording(const SynthSpec& spec, const PlantedTruth& truth,
                                const std::vector<WordEvent>& events, int subject_index,
                                int run_index);

// Piecewise-constant per-sample drive of one axis (z-scored feature of the
// active word, 0 where no word is active). Shared by gen_recording and tests.
Eigen::VectorXd axis_drive(const SynthSpec& spec, const PlantedTruth& truth,
                           const std::vector<WordEvent>& events, int axis);

Corpus gen_corpus(const SynthSpec& spec, int n_sequences, int seq_len, bool bigram = true);

void save_events_csv(const std::string& path, const std::vector<WordEvent>& events);
std::vector<WordEvent> load_events_csv(const std::string& path);
void save_labels_csv(const std::string& path, const LabelTables& vocab);
LabelTables load_labels_csv(const std::string& path);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace neuraxis::synth
