#include "neuraxis/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "fft_util.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/table.hpp"

namespace neuraxis::synth {

using std::numbers::pi;

namespace {

// Seed-derivation tags: one per generator family so streams never collide.
constexpr std::uint64_t kTagVocab = 0x01;
constexpr std::uint64_t kTagStream = 0x02;
constexpr std::uint64_t kTagRecording = 0x03;
constexpr std::uint64_t kTagCorpus = 0x04;

std::vector<double> zipf_probs(int vocab_size, double exponent = 1.0) {
  std::vector<double> p(static_cast<std::size_t>(vocab_size));
  double h = 0.0;
  for (int k = 0; k < vocab_size; ++k) {
    p[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k + 1), -exponent);
    h += p[static_cast<std::size_t>(k)];
  }
  for (auto& v : p) v /= h;
  return p;
}

std::vector<double> zscore(const std::vector<double>& x) {
  const double m = stats::mean(x);
  const double s = stats::sd(x);
  require(s > 0.0, "zscore: zero variance");
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m) / s;
  return z;
}

int sample_cumulative(const std::vector<double>& cum, double u) {
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(std::distance(cum.begin(), it),
                                                   static_cast<std::ptrdiff_t>(cum.size()) - 1));
}

std::string pad_id(const char* prefix, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, k);
  return buf;
}

// Unit-variance 1/f-amplitude noise (flat below 1 Hz to bound low-frequency
// power), deterministic per rng stream.
Eigen::VectorXd pink_noise(int n, double sfreq, Rng& rng) {
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n));
  for (auto& b : buf) b = {rng.normal(), 0.0};
  fftutil::fft(buf, false);
  for (int k = 0; k < n; ++k) {
    const int kk = std::min(k, n - k);
    const double f = static_cast<double>(kk) * sfreq / static_cast<double>(n);
    const double gain = (k == 0) ? 0.0 : std::pow(std::max(f, 1.0), -0.5);
    buf[static_cast<std::size_t>(k)] *= gain;
  }
  fftutil::fft(buf, true);
  Eigen::VectorXd out(n);
  for (int t = 0; t < n; ++t) out(t) = buf[static_cast<std::size_t>(t)].real();
  const double sd = std::sqrt(out.squaredNorm() / static_cast<double>(n));
  require(sd > 0.0, "pink_noise: degenerate draw");
  return out / sd;
}

}  // namespace

const char* feature_name(int feature_id) {
  switch (feature_id) {
    case kFeatureEmbChange: return "emb_change";
    case kFeatureLogfreq: return "logfreq";
    case kFeatureFuncContent: return "func_content";
    default: throw_invalid("unknown feature id");
  }
}

void SynthSpec::validate() const {
  require(n_subjects >= 1 && n_runs >= 1, "need at least one subject and run");
  require(n_channels >= 4, "n_channels must be >= 4");
  require(sfreq >= 4.0 * band.second, "sfreq must be >= 4x band high");
  require(band.first > 0.0 && band.first < band.second, "band must satisfy 0 < low < high");
  require(n_latent_axes >= 0 && n_latent_axes <= kVocabFeatureCount,
          "n_latent_axes exceeds vocabulary feature count");
  require(duration_s * word_rate >= 10.0, "need at least 10 expected words per run");
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(coupling_gain >= 0.0, "coupling_gain must be nonnegative");
}

LabelTables gen_vocabulary(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, kTagVocab));
  const auto p = zipf_probs(spec.vocab_size);

  LabelTables t;
  const std::size_t v = static_cast<std::size_t>(spec.vocab_size);
  t.token.resize(v);
  t.logfreq.resize(v);
  t.pos_id.resize(v);
  t.emb_change.resize(v);
  t.is_function.resize(v);
  t.animate.resize(v);
  t.concreteness.resize(v);

  for (std::size_t w = 0; w < v; ++w) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%03zu", w);
    t.token[w] = buf;
    t.logfreq[w] = std::log(p[w]);
    t.pos_id[w] = static_cast<int>(rng.below(8));
    t.emb_change[w] = rng.normal();
    t.is_function[w] = t.pos_id[w] >= 4 ? 1 : 0;
  }
  const auto zlf = zscore(t.logfreq);
  for (std::size_t w = 0; w < v; ++w) {
    // Animacy leans on emb_change with a logfreq confound; concreteness leans
    // on the content/function split. Both stay noisy so no label duplicates a
    // planted axis exactly.
    t.animate[w] = (t.emb_change[w] + 0.3 * zlf[w] + 0.7 * rng.normal()) > 0.0 ? 1 : 0;
    t.concreteness[w] = (t.is_function[w] ? -0.8 : 0.8) + 0.6 * rng.normal();
  }
  return t;
}

std::pair<std::vector<WordEvent>, LabelTables> gen_word_stream(const SynthSpec& spec,
                                                               int run_index) {
  spec.validate();
  require(run_index >= 0, "run_index must be nonnegative");
  LabelTables vocab = gen_vocabulary(spec);
  const auto p = zipf_probs(spec.vocab_size);
  std::vector<double> cum(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    cum[i] = acc;
  }

  Rng rng(derive_seed(spec.seed, kTagStream, static_cast<std::uint64_t>(run_index)));
  std::vector<WordEvent> events;
  double t = rng.exponential(spec.word_rate);
  while (t < spec.duration_s) {
    WordEvent ev;
    ev.onset = t;
    ev.word_id = sample_cumulative(cum, rng.uniform());
    ev.token = vocab.token[static_cast<std::size_t>(ev.word_id)];
    ev.logfreq = vocab.logfreq[static_cast<std::size_t>(ev.word_id)];
    ev.pos_id = vocab.pos_id[static_cast<std::size_t>(ev.word_id)];
    ev.emb_change = vocab.emb_change[static_cast<std::size_t>(ev.word_id)];
    const double gap = rng.exponential(spec.word_rate);
    ev.offset = std::min(spec.duration_s, t + gap);
    events.push_back(std::move(ev));
    t += gap;
  }
  require(!events.empty(), "word stream came out empty; raise duration or rate");
  return {std::move(events), std::move(vocab)};
}

PlantedTruth make_planted_truth(const SynthSpec& spec, const LabelTables& vocab) {
  spec.validate();
  require(vocab.size() == spec.vocab_size, "vocabulary size mismatch");
  require(4 * spec.n_latent_axes <= spec.n_channels,
          "need 4 channels per planted axis");

  PlantedTruth truth;
  const int n_axes = spec.n_latent_axes;
  const Eigen::Index n_edges = signal::edge_count(spec.n_channels);
  truth.axis_loadings = Eigen::MatrixXd::Zero(n_axes, n_edges);
  truth.word_axis_scores.resize(spec.vocab_size, n_axes);
  truth.feature_axis_map.resize(static_cast<std::size_t>(n_axes));
  truth.axis_channels.resize(static_cast<std::size_t>(n_axes));

  for (int a = 0; a < n_axes; ++a) {
    truth.feature_axis_map[static_cast<std::size_t>(a)] = a;  // axis a <- feature a
    auto& chans = truth.axis_channels[static_cast<std::size_t>(a)];
    for (int c = 0; c < 4; ++c) chans.push_back(4 * a + c);
    for (std::size_t i = 0; i < chans.size(); ++i)
      for (std::size_t j = i + 1; j < chans.size(); ++j)
        truth.axis_loadings(a, signal::edge_index(chans[i], chans[j], spec.n_channels)) =
            1.0 / std::sqrt(6.0);

    std::vector<double> raw(static_cast<std::size_t>(spec.vocab_size));
    for (int w = 0; w < spec.vocab_size; ++w) {
      const std::size_t uw = static_cast<std::size_t>(w);
      switch (a) {
        case kFeatureEmbChange: raw[uw] = vocab.emb_change[uw]; break;
        case kFeatureLogfreq: raw[uw] = vocab.logfreq[uw]; break;
        case kFeatureFuncContent: raw[uw] = vocab.is_function[uw] ? -1.0 : 1.0; break;
        default: throw_invalid("unsupported planted axis index");
      }
    }
    const auto z = zscore(raw);
    for (int w = 0; w < spec.vocab_size; ++w)
      truth.word_axis_scores(w, a) = z[static_cast<std::size_t>(w)];
  }
  return truth;
}

Eigen::VectorXd axis_drive(const SynthSpec& spec, const PlantedTruth& truth,
                           const std::vector<WordEvent>& events, int axis) {
  require(axis >= 0 && axis < truth.word_axis_scores.cols(), "axis out of range");
  const int n = static_cast<int>(std::lround(spec.duration_s * spec.sfreq));
  Eigen::VectorXd drive = Eigen::VectorXd::Zero(n);
  for (const auto& ev : events) {
    require(ev.onset < ev.offset, "event with onset >= offset");
    require(ev.offset <= spec.duration_s + 1e-9, "event extends past recording duration");
    require(ev.word_id >= 0 && ev.word_id < spec.vocab_size, "event word_id out of range");
    const int t0 = std::max(0, static_cast<int>(std::lround(ev.onset * spec.sfreq)));
    const int t1 = std::min(n, static_cast<int>(std::lround(ev.offset * spec.sfreq)));
    const double z = truth.word_axis_scores(ev.word_id, axis);
    for (int t = t0; t < t1; ++t) drive(t) = z;
  }
  return drive;
}

signal::Recording gen_recording(const SynthSpec& spec, const PlantedTruth& truth,
                                const std::vector<WordEvent>& events, int subject_index,
                                int run_index) {
  spec.validate();
  require(subject_index >= 0 && run_index >= 0, "subject/run index must be nonnegative");
  require(!events.empty(), "gen_recording: no events");
  for (std::size_t i = 1; i < events.size(); ++i)
    require(events[i - 1].onset <= events[i].onset, "events must be sorted by onset");
  require(truth.word_axis_scores.cols() == spec.n_latent_axes, "truth/spec axis count mismatch");

  const int n = static_cast<int>(std::lround(spec.duration_s * spec.sfreq));
  const double dt = 1.0 / spec.sfreq;
  const std::uint64_t rec_seed =
      derive_seed(spec.seed, kTagRecording, static_cast<std::uint64_t>(subject_index),
                  static_cast<std::uint64_t>(run_index));

  signal::Recording rec;
  rec.samples.setZero(spec.n_channels, n);
  rec.sfreq = spec.sfreq;
  rec.subject_id = pad_id("sub", subject_index);
  rec.run_id = pad_id("run", run_index);
  for (int c = 0; c < spec.n_channels; ++c) rec.channel_names.push_back(pad_id("ch", c));

  for (int c = 0; c < spec.n_channels; ++c) {
    Rng rng(derive_seed(rec_seed, 2, static_cast<std::uint64_t>(c)));
    rec.samples.row(c) = pink_noise(n, spec.sfreq, rng).transpose();
  }

  // σ of the noise inside the pass band: amplitude-1/f over [1, Nyquist],
  // flat below 1 Hz, total variance 1.
  const double nyq = spec.sfreq / 2.0;
  const double total = 1.0 + std::log(nyq / 1.0);
  const double band_frac = std::log(spec.band.second / spec.band.first) / total;
  const double sigma_band = std::sqrt(band_frac);
  const double amp0 = sigma_band * std::numbers::sqrt2;  // in-band SNR 1 at drive 0

  const double f_mid = 0.5 * (spec.band.first + spec.band.second);
  const double f_lo = spec.band.first + 0.1 * (spec.band.second - spec.band.first);
  const double f_hi = spec.band.second - 0.1 * (spec.band.second - spec.band.first);
  const double tau_smooth = 0.15;
  const double smooth_a = dt / (tau_smooth + dt);

  for (int a = 0; a < spec.n_latent_axes; ++a) {
    Rng rng(derive_seed(rec_seed, 1, static_cast<std::uint64_t>(a)));
    const Eigen::VectorXd drive = axis_drive(spec, truth, events, a);

    double freq = f_mid;
    double phase = rng.uniform() * 2.0 * pi;
    double z_s = 0.0;
    const auto& chans = truth.axis_channels[static_cast<std::size_t>(a)];
    for (int t = 0; t < n; ++t) {
      freq += 1.0 * (f_mid - freq) * dt + 0.6 * std::sqrt(dt) * rng.normal();
      freq = std::clamp(freq, f_lo, f_hi);
      phase += 2.0 * pi * freq * dt;
      z_s += smooth_a * (std::clamp(drive(t), -3.0, 3.0) - z_s);
      const double amp = amp0 * std::exp(0.35 * spec.coupling_gain * z_s);
      for (std::size_t k = 0; k < chans.size(); ++k) {
        const double lag = static_cast<double>(k) * pi / 5.0;
        rec.samples(chans[k], t) += amp * std::cos(phase + lag);
      }
    }
  }
  return rec;
}

Corpus gen_corpus(const SynthSpec& spec, int n_sequences, int seq_len, bool bigram) {
  spec.validate();
  require(spec.vocab_size >= 50, "gen_corpus: vocab_size must be >= 50");
  require(n_sequences >= 0, "gen_corpus: negative sequence count");

  Corpus corpus;
  corpus.vocab_size = spec.vocab_size;
  corpus.bos_id = spec.vocab_size;
  if (n_sequences == 0) {
    corpus.empty_flag = true;
    return corpus;
  }
  require(seq_len >= 2, "gen_corpus: sequences need at least BOS + 1 token");

  const LabelTables vocab = gen_vocabulary(spec);
  const auto p = zipf_probs(spec.vocab_size);
  const auto zlf = zscore(vocab.logfreq);
  std::vector<double> fs(static_cast<std::size_t>(spec.vocab_size));
  for (int w = 0; w < spec.vocab_size; ++w)
    fs[static_cast<std::size_t>(w)] = vocab.is_function[static_cast<std::size_t>(w)] ? -1.0 : 1.0;

  const std::size_t v = static_cast<std::size_t>(spec.vocab_size);
  std::vector<double> unigram_cum(v);
  double acc = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    acc += p[i];
    unigram_cum[i] = acc;
  }

  // Row u holds the cumulative next-token distribution given previous word u:
  // logits(v|u) = log p_zipf(v) + 0.3 z(u) z(v) + 0.7 fs(u) fs(v).
  std::vector<std::vector<double>> bigram_cum;
  if (bigram) {
    bigram_cum.assign(v, std::vector<double>(v));
    std::vector<double> logits(v);
    for (std::size_t u = 0; u < v; ++u) {
      double mx = -1e300;
      for (std::size_t w = 0; w < v; ++w) {
        logits[w] = std::log(p[w]) + 0.3 * zlf[u] * zlf[w] + 0.7 * fs[u] * fs[w];
        mx = std::max(mx, logits[w]);
      }
      double z = 0.0;
      for (std::size_t w = 0; w < v; ++w) {
        logits[w] = std::exp(logits[w] - mx);
        z += logits[w];
      }
      double c = 0.0;
      for (std::size_t w = 0; w < v; ++w) {
        c += logits[w] / z;
        bigram_cum[u][w] = c;
      }
    }
  }

  Rng rng(derive_seed(spec.seed, kTagCorpus));
  corpus.sequences.reserve(static_cast<std::size_t>(n_sequences));
  for (int s = 0; s < n_sequences; ++s) {
    std::vector<int> seq;
    seq.reserve(static_cast<std::size_t>(seq_len));
    seq.push_back(corpus.bos_id);
    int prev = -1;
    for (int t = 1; t < seq_len; ++t) {
      const double u = rng.uniform();
      int w;
      if (!bigram || prev < 0)
        w = sample_cumulative(unigram_cum, u);
      else
        w = sample_cumulative(bigram_cum[static_cast<std::size_t>(prev)], u);
      seq.push_back(w);
      prev = w;
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

void save_events_csv(const std::string& path, const std::vector<WordEvent>& events) {
  CsvWriter w({"onset_s", "offset_s", "word_id", "token", "logfreq", "pos_id", "emb_change"});
  for (const auto& ev : events) {
    w.begin_row();
    w.cell(ev.onset);
    w.cell(ev.offset);
    w.cell(static_cast<std::int64_t>(ev.word_id));
    w.cell(ev.token);
    w.cell(ev.logfreq);
    w.cell(static_cast<std::int64_t>(ev.pos_id));
    w.cell(ev.emb_change);
    w.end_row();
  }
  w.save(path);
}

std::vector<WordEvent> load_events_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int c_on = t.column_index("onset_s");
  const int c_off = t.column_index("offset_s");
  const int c_id = t.column_index("word_id");
  const int c_tok = t.column_index("token");
  const int c_lf = t.column_index("logfreq");
  const int c_pos = t.column_index("pos_id");
  const int c_emb = t.column_index("emb_change");
  std::vector<WordEvent> events;
  events.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    WordEvent ev;
    ev.onset = t.number(r, c_on);
    ev.offset = t.number(r, c_off);
    ev.word_id = static_cast<int>(t.number(r, c_id));
    ev.token = t.rows[r][static_cast<std::size_t>(c_tok)];
    ev.logfreq = t.number(r, c_lf);
    ev.pos_id = static_cast<int>(t.number(r, c_pos));
    ev.emb_change = t.number(r, c_emb);
    events.push_back(std::move(ev));
  }
  return events;
}

void save_labels_csv(const std::string& path, const LabelTables& vocab) {
  CsvWriter w({"word_id", "token", "logfreq", "pos_id", "emb_change", "is_function", "animate",
               "concreteness"});
  for (int i = 0; i < vocab.size(); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    w.begin_row();
    w.cell(static_cast<std::int64_t>(i));
    w.cell(vocab.token[u]);
    w.cell(vocab.logfreq[u]);
    w.cell(static_cast<std::int64_t>(vocab.pos_id[u]));
    w.cell(vocab.emb_change[u]);
    w.cell(static_cast<std::int64_t>(vocab.is_function[u]));
    w.cell(static_cast<std::int64_t>(vocab.animate[u]));
    w.cell(vocab.concreteness[u]);
    w.end_row();
  }
  w.save(path);
}

LabelTables load_labels_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int c_tok = t.column_index("token");
  const int c_lf = t.column_index("logfreq");
  const int c_pos = t.column_index("pos_id");
  const int c_emb = t.column_index("emb_change");
  const int c_fn = t.column_index("is_function");
  const int c_an = t.column_index("animate");
  const int c_co = t.column_index("concreteness");
  const int c_id = t.column_index("word_id");
  LabelTables v;
  const std::size_t n = t.rows.size();
  v.token.resize(n);
  v.logfreq.resize(n);
  v.pos_id.resize(n);
  v.emb_change.resize(n);
  v.is_function.resize(n);
  v.animate.resize(n);
  v.concreteness.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int id = static_cast<int>(t.number(r, c_id));
    require(id == static_cast<int>(r), "labels csv must be sorted by word_id");
    v.token[r] = t.rows[r][static_cast<std::size_t>(c_tok)];
    v.logfreq[r] = t.number(r, c_lf);
    v.pos_id[r] = static_cast<int>(t.number(r, c_pos));
    v.emb_change[r] = t.number(r, c_emb);
    v.is_function[r] = static_cast<int>(t.number(r, c_fn));
    v.animate[r] = static_cast<int>(t.number(r, c_an));
    v.concreteness[r] = t.number(r, c_co);
  }
  return v;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::string buf;
  buf += "# vocab_size=" + std::to_string(corpus.vocab_size) +
         " bos_id=" + std::to_string(corpus.bos_id) + "\n";
  for (const auto& seq : corpus.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) buf += ' ';
      buf += std::to_string(seq[i]);
    }
    buf += '\n';
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw_io("cannot write corpus: " + path);
  std::fwrite(buf.data(), 1, buf.size(), f);
  std::fclose(f);
}

Corpus load_corpus(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw_io("cannot read corpus: " + path);
  std::string buf;
  char chunk[65536];
  std::size_t got;
  while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) buf.append(chunk, got);
  std::fclose(f);

  Corpus corpus;
  std::size_t pos = 0;
  bool first = true;
  while (pos < buf.size()) {
    std::size_t eol = buf.find('\n', pos);
    if (eol == std::string::npos) eol = buf.size();
    std::string line = buf.substr(pos, eol - pos);
    pos = eol + 1;
    if (first) {
      first = false;
      int vs = 0, bos = 0;
      if (std::sscanf(line.c_str(), "# vocab_size=%d bos_id=%d", &vs, &bos) != 2)
        throw_io("corpus header malformed: " + path);
      corpus.vocab_size = vs;
      corpus.bos_id = bos;
      continue;
    }
    if (line.empty()) continue;
    std::vector<int> seq;
    const char* s = line.c_str();
    char* end = nullptr;
    while (*s) {
      const long v = std::strtol(s, &end, 10);
      if (end == s) break;
      seq.push_back(static_cast<int>(v));
      s = end;
      while (*s == ' ') ++s;
    }
    if (!seq.empty()) corpus.sequences.push_back(std::move(seq));
  }
  corpus.empty_flag = corpus.sequences.empty();
  return corpus;
}

}  // namespace neuraxis::synth
