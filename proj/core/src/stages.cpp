#include "neuraxis/stages.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "neuraxis/axes.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/harness.hpp"
#include "neuraxis/manifest.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/split_half.hpp"
#include "neuraxis/version.hpp"

namespace neuraxis::cli {

namespace {

namespace fs = std::filesystem;

// Stage seed tags under the master seed.
constexpr std::uint64_t kTagModelInit = 0x10;
constexpr std::uint64_t kTagTrain = 0x11;
constexpr std::uint64_t kTagIca = 0x12;
constexpr std::uint64_t kTagValidate = 0x13;
constexpr std::uint64_t kTagAdapter = 0x14;
constexpr std::uint64_t kTagSweep = 0x15;
constexpr std::uint64_t kTagRandomVec = 0x16;
constexpr std::uint64_t kTagReport = 0x17;
constexpr std::uint64_t kTagTextProbe = 0x18;

std::string two(int v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d", v);
  return buf;
}

std::string rec_name(int s, int r) { return "rec_s" + two(s) + "_r" + two(r) + ".naxt"; }
std::string events_name(int r) { return "events_r" + two(r) + ".csv"; }
std::string states_prefix(int s, int r) { return "states_s" + two(s) + "_r" + two(r); }
std::string atlas_prefix(int s) { return "atlas_s" + two(s); }

// Declares inputs/outputs up front, answers freshness, and writes the stage
// manifest once the work is done.
class StageRunner {
 public:
  StageRunner(const StageContext& ctx, std::string stage)
      : ctx_(ctx), stage_(std::move(stage)) {
    manifest_.stage = stage_;
    manifest_.tool_version = kVersion;
    manifest_.config_hash = ctx.cfg.hash();
    manifest_.seed = ctx.cfg.master_seed;
  }

  void need(const std::string& rel) { inputs_.push_back(rel); }
  void makes(const std::string& rel) { outputs_.push_back(rel); }

  std::string path(const std::string& rel) const { return ctx_.out_dir + "/" + rel; }
  std::string manifest_path() const { return path(stage_ + ".manifest.json"); }

  // True when a previous run with identical config/seed left all inputs and
  // outputs in place with matching digests.
  bool fresh() const {
    if (ctx_.force) return false;
    const auto m = try_load_manifest(manifest_path());
    if (!m) return false;
    if (m->stage != stage_ || m->tool_version != kVersion ||
        m->config_hash != manifest_.config_hash || m->seed != manifest_.seed)
      return false;
    auto matches = [this](const std::map<std::string, std::string>& recorded,
                          const std::vector<std::string>& declared) {
      if (recorded.size() != declared.size()) return false;
      for (const std::string& rel : declared) {
        const auto it = recorded.find(rel);
        if (it == recorded.end()) return false;
        if (!fs::exists(path(rel))) return false;
        if (file_digest(path(rel)) != it->second) return false;
      }
      return true;
    };
    return matches(m->inputs, inputs_) && matches(m->outputs, outputs_);
  }

  // Inputs must exist before the stage body runs.
  void check_inputs() {
    for (const std::string& rel : inputs_) {
      if (!fs::exists(path(rel))) throw_io("missing input artifact: " + path(rel));
      manifest_.inputs[rel] = file_digest(path(rel));
    }
  }

  void finish() {
    for (const std::string& rel : outputs_) {
      if (!fs::exists(path(rel))) throw_io("stage did not produce output: " + path(rel));
      manifest_.outputs[rel] = file_digest(path(rel));
    }
    save_manifest(manifest_path(), manifest_);
  }

 private:
  const StageContext& ctx_;
  std::string stage_;
  RunManifest manifest_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

std::vector<double> label_values(const synth::LabelTables& labels, const std::string& name,
                                 const std::vector<int>& word_ids) {
  std::vector<double> out;
  for (int id : word_ids) {
    require(id >= 0 && id < labels.size(), "word id outside label tables");
    const auto i = static_cast<std::size_t>(id);
    if (name == "logfreq")
      out.push_back(labels.logfreq[i]);
    else if (name == "emb_change")
      out.push_back(labels.emb_change[i]);
    else if (name == "concreteness")
      out.push_back(labels.concreteness[i]);
    else if (name == "animate")
      out.push_back(labels.animate[i]);
    else if (name == "is_function")
      out.push_back(labels.is_function[i]);
    else
      throw_invalid("unknown label: " + name);
  }
  return out;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

model::ModelConfig model_config(const RunConfig& cfg) {
  model::ModelConfig mc;
  mc.vocab_size = cfg.model.vocab_size;
  mc.d_model = cfg.model.d_model;
  mc.n_layers = cfg.model.n_layers;
  mc.n_heads = cfg.model.n_heads;
  mc.d_ff = cfg.model.d_ff;
  mc.context_len = cfg.model.context_len;
  mc.seed = derive_seed(cfg.master_seed, kTagModelInit);
  return mc;
}

std::vector<std::vector<int>> sweep_prompts(const synth::Corpus& corpus, const RunConfig& cfg) {
  const std::size_t n = corpus.sequences.size();
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(cfg.model.val_frac * static_cast<double>(n))));
  require(n > n_val, "corpus too small to hold out prompt sequences");
  require(n_val >= static_cast<std::size_t>(cfg.sweep.n_prompts),
          "not enough held-out sequences for sweep prompts");
  std::vector<std::vector<int>> prompts;
  for (int p = 0; p < cfg.sweep.n_prompts; ++p) {
    std::vector<int> seq = corpus.sequences[n - n_val + static_cast<std::size_t>(p)];
    if (static_cast<int>(seq.size()) > cfg.sweep.prompt_len)
      seq.resize(static_cast<std::size_t>(cfg.sweep.prompt_len));
    prompts.push_back(std::move(seq));
  }
  return prompts;
}

}  // namespace

bool run_synth(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "synth");
  run.makes("labels.csv");
  run.makes("corpus.txt");
  for (int r = 0; r < cfg.synth.n_runs; ++r) run.makes(events_name(r));
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r) run.makes(rec_name(s, r));
  if (run.fresh()) return false;
  run.check_inputs();

  const synth::LabelTables vocab = synth::gen_vocabulary(cfg.synth);
  synth::save_labels_csv(run.path("labels.csv"), vocab);
  const synth::PlantedTruth truth = synth::make_planted_truth(cfg.synth, vocab);

  for (int r = 0; r < cfg.synth.n_runs; ++r) {
    const auto [events, labels] = synth::gen_word_stream(cfg.synth, r);
    (void)labels;
    synth::save_events_csv(run.path(events_name(r)), events);
    for (int s = 0; s < cfg.synth.n_subjects; ++s) {
      const signal::Recording rec = synth::gen_recording(cfg.synth, truth, events, s, r);
      signal::save_recording(run.path(rec_name(s, r)), rec);
    }
  }

  const synth::Corpus corpus =
      synth::gen_corpus(cfg.synth, cfg.model.n_sequences, cfg.model.seq_len);
  synth::save_corpus(run.path("corpus.txt"), corpus);
  run.finish();
  return true;
}

bool run_connectivity(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "connectivity");
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r) run.need(rec_name(s, r));
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r) {
      run.makes(states_prefix(s, r) + ".naxt");
      run.makes(states_prefix(s, r) + ".json");
    }
  if (run.fresh()) return false;
  run.check_inputs();

  const signal::ConnMethod method = signal::conn_method_from_string(cfg.signal.method);
  const signal::WindowSpec win{cfg.signal.window_s, cfg.signal.step_s};
  std::vector<signal::EdgeSeries> edge_seqs;
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r) {
      const signal::Recording rec = signal::load_recording(run.path(rec_name(s, r)));
      const signal::Recording filtered =
          signal::bandpass_filter(rec, cfg.synth.band, cfg.signal.taps);
      const signal::PhaseSeries phase = signal::analytic_phase(filtered);
      edge_seqs.push_back(
          signal::connectivity_windows(phase, win, method, cfg.signal.edge_trim_s));
    }

  const std::vector<signal::ConnectivityStateSequence> states =
      signal::edge_pca(edge_seqs, cfg.signal.n_components);
  std::size_t idx = 0;
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r)
      signal::save_state_sequence(run.path(states_prefix(s, r)), states[idx++], win,
                                  cfg.synth.band);
  run.finish();
  return true;
}

bool run_atlas_stage(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "atlas");
  for (int r = 0; r < cfg.synth.n_runs; ++r) run.need(events_name(r));
  for (int s = 0; s < cfg.synth.n_subjects; ++s)
    for (int r = 0; r < cfg.synth.n_runs; ++r) run.need(states_prefix(s, r) + ".naxt");
  for (int s = 0; s < cfg.synth.n_subjects; ++s) {
    run.makes(atlas_prefix(s) + ".naxt");
    run.makes(atlas_prefix(s) + ".json");
  }
  run.makes("atlas_avg.naxt");
  run.makes("atlas_avg.json");
  run.makes("atlas_summary.csv");
  if (run.fresh()) return false;
  run.check_inputs();

  std::vector<std::vector<synth::WordEvent>> events;
  for (int r = 0; r < cfg.synth.n_runs; ++r)
    events.push_back(synth::load_events_csv(run.path(events_name(r))));

  std::vector<atlas::WordAtlas> per_subject;
  for (int s = 0; s < cfg.synth.n_subjects; ++s) {
    std::vector<atlas::DesignMatrix> designs;
    std::vector<Eigen::MatrixXd> state_mats;
    std::vector<std::vector<double>> window_times;
    for (int r = 0; r < cfg.synth.n_runs; ++r) {
      const signal::ConnectivityStateSequence seq =
          signal::load_state_sequence(run.path(states_prefix(s, r)));
      designs.push_back(atlas::build_design(events[static_cast<std::size_t>(r)],
                                            seq.window_times, cfg.atlas.lags));
      state_mats.push_back(seq.states);
      window_times.push_back(seq.window_times);
    }
    // Folds group whole runs, so they can never outnumber the runs.
    const int n_folds = std::min(cfg.atlas.n_folds, cfg.synth.n_runs);
    const auto [state_model, oof] =
        atlas::fit_state_model(designs, state_mats, cfg.atlas.alphas, n_folds);
    (void)state_model;
    atlas::WordAtlas wa =
        atlas::build_word_atlas(oof, events, window_times, "s" + two(s) + "/oof");
    atlas::save_atlas(run.path(atlas_prefix(s)), wa);
    per_subject.push_back(std::move(wa));
  }

  const atlas::WordAtlas avg = atlas::average_atlases(per_subject);
  atlas::save_atlas(run.path("atlas_avg"), avg);
  atlas::save_atlas_summary_csv(run.path("atlas_summary.csv"), avg);
  run.finish();
  return true;
}

bool run_axes_stage(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "axes");
  run.need("atlas_avg.naxt");
  for (int s = 0; s < cfg.synth.n_subjects; ++s) run.need(atlas_prefix(s) + ".naxt");
  run.makes("axis_basis.naxt");
  run.makes("axis_basis.json");
  run.makes("split_half.json");
  if (run.fresh()) return false;
  run.check_inputs();

  const atlas::WordAtlas avg = atlas::load_atlas(run.path("atlas_avg"));
  const axes::AxisBasis basis =
      axes::fit_ica(avg, cfg.axes.n_axes, derive_seed(cfg.master_seed, kTagIca));
  axes::save_axis_basis(run.path("axis_basis"), basis);

  nlohmann::json sj;
  if (cfg.synth.n_subjects >= 4) {
    std::vector<atlas::WordAtlas> per_subject;
    for (int s = 0; s < cfg.synth.n_subjects; ++s)
      per_subject.push_back(atlas::load_atlas(run.path(atlas_prefix(s))));
    const atlas::SplitReport rep =
        atlas::split_half(per_subject, cfg.axes.n_axes, derive_seed(cfg.master_seed, kTagIca, 2));
    sj["skipped"] = false;
    sj["abs_r_mean"] = rep.abs_r_mean;
    sj["abs_r_spread"] = rep.abs_r_spread;
    sj["mean_abs_r"] = rep.mean_abs_r;
    sj["n_odd"] = rep.n_odd;
    sj["n_even"] = rep.n_even;
    sj["shared_words"] = rep.shared_words;
  } else {
    sj["skipped"] = true;
    sj["reason"] = "split-half needs >= 4 subjects";
  }
  {
    // Closed before finish() so the digest sees the flushed bytes.
    std::ofstream f(run.path("split_half.json"), std::ios::trunc);
    if (!f) throw_io("cannot write split_half.json");
    f << sj.dump(2) << "\n";
  }
  run.finish();
  return true;
}

bool run_validate(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "validate");
  run.need("axis_basis.naxt");
  run.need("labels.csv");
  run.makes("validation.csv");
  if (run.fresh()) return false;
  run.check_inputs();

  const axes::AxisBasis basis = axes::load_axis_basis(run.path("axis_basis"));
  const synth::LabelTables labels = synth::load_labels_csv(run.path("labels.csv"));

  struct LabelPlan {
    std::string name;
    axes::LabelMode mode;
    std::vector<std::string> confounds;
  };
  const std::vector<LabelPlan> plans = {
      {"logfreq", axes::LabelMode::continuous, {}},
      {"emb_change", axes::LabelMode::continuous, {}},
      {"animate", axes::LabelMode::binary, {"logfreq", "concreteness"}},
      {"is_function", axes::LabelMode::binary, {"logfreq"}},
  };

  std::vector<axes::ValidationReport> reports;
  const std::uint64_t seed = derive_seed(cfg.master_seed, kTagValidate);
  for (int k = 0; k < basis.n_axes; ++k) {
    const Eigen::VectorXd scores = basis.word_scores.col(k);
    for (std::size_t pi = 0; pi < plans.size(); ++pi) {
      const LabelPlan& plan = plans[pi];
      const Eigen::VectorXd y = to_eigen(label_values(labels, plan.name, basis.word_ids));
      Eigen::MatrixXd confounds(scores.size(), static_cast<Eigen::Index>(plan.confounds.size()));
      for (std::size_t c = 0; c < plan.confounds.size(); ++c)
        confounds.col(static_cast<Eigen::Index>(c)) =
            to_eigen(label_values(labels, plan.confounds[c], basis.word_ids));
      const auto axis_reports = axes::validate_axis(
          scores, y, confounds, plan.mode, cfg.axes.n_perm, cfg.axes.n_boot,
          derive_seed(seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pi)), k,
          plan.name);
      reports.insert(reports.end(), axis_reports.begin(), axis_reports.end());
    }
  }
  axes::save_validation_csv(run.path("validation.csv"), reports);
  run.finish();
  return true;
}

bool run_train_lm(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "train-lm");
  run.need("corpus.txt");
  run.makes("lm.naxt");
  run.makes("train_report.json");
  if (run.fresh()) return false;
  run.check_inputs();

  const synth::Corpus corpus = synth::load_corpus(run.path("corpus.txt"));
  model::TrainSpec spec;
  spec.batch_size = cfg.model.batch_size;
  spec.n_steps = cfg.model.n_steps;
  spec.lr = cfg.model.lr;
  spec.warmup_steps = cfg.model.warmup_steps;
  spec.grad_clip = cfg.model.grad_clip;
  spec.val_frac = cfg.model.val_frac;
  spec.eval_every = cfg.model.eval_every;
  spec.seed = derive_seed(cfg.master_seed, kTagTrain);

  const auto [weights, report] = model::train_toy_lm(corpus, model_config(cfg), spec);
  model::save_weights(run.path("lm.naxt"), weights);

  nlohmann::json j;
  j["val_ppl"] = report.val_ppl;
  j["unigram_ppl"] = report.unigram_ppl;
  j["diverged"] = report.diverged;
  j["diverged_step"] = report.diverged_step;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [step, loss] : report.loss_history) hist.push_back({step, loss});
  j["loss_history"] = hist;
  {
    // Closed before finish() so the digest sees the flushed bytes.
    std::ofstream f(run.path("train_report.json"), std::ios::trunc);
    if (!f) throw_io("cannot write train_report.json");
    f << j.dump(2) << "\n";
  }
  run.finish();
  return true;
}

bool run_adapter_stage(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "adapter");
  run.need("lm.naxt");
  run.need("axis_basis.naxt");
  run.need("corpus.txt");
  run.need("labels.csv");
  run.makes("adapter.naxt");
  run.makes("adapter.json");
  for (int k = 0; k < cfg.axes.n_axes; ++k)
    run.makes("vec_brain_axis_" + std::to_string(k) + ".json");
  run.makes("vec_actadd.json");
  run.makes("vec_random.json");
  run.makes("vec_text_probe.json");
  if (run.fresh()) return false;
  run.check_inputs();

  const model::ModelWeights weights = model::load_weights(run.path("lm.naxt"));
  const axes::AxisBasis basis = axes::load_axis_basis(run.path("axis_basis"));
  const synth::Corpus corpus = synth::load_corpus(run.path("corpus.txt"));
  const synth::LabelTables labels = synth::load_labels_csv(run.path("labels.csv"));

  const adapter::HiddenTable table =
      adapter::collect_word_hidden(weights, corpus, cfg.adapter.layer, basis.word_ids);

  Eigen::MatrixXd axis_scores(table.rows(), basis.n_axes);
  for (int i = 0; i < table.rows(); ++i) {
    const auto it = std::lower_bound(basis.word_ids.begin(), basis.word_ids.end(),
                                     table.word_ids[static_cast<std::size_t>(i)]);
    require(it != basis.word_ids.end() && *it == table.word_ids[static_cast<std::size_t>(i)],
            "hidden table word missing from axis basis");
    axis_scores.row(i) =
        basis.word_scores.row(std::distance(basis.word_ids.begin(), it));
  }

  const adapter::Adapter ad =
      adapter::fit_adapter(table, axis_scores, cfg.adapter.alphas, cfg.adapter.holdout_frac,
                           derive_seed(cfg.master_seed, kTagAdapter));
  adapter::save_adapter(run.path("adapter"), ad);

  for (int k = 0; k < cfg.axes.n_axes; ++k)
    adapter::save_vector_json(run.path("vec_brain_axis_" + std::to_string(k) + ".json"),
                              adapter::brain_axis_vector(ad, k));

  const std::vector<double> probe =
      label_values(labels, cfg.adapter.probe_label, table.word_ids);
  adapter::save_vector_json(run.path("vec_actadd.json"),
                            adapter::actadd_vector(table, probe, cfg.adapter.n_top));
  adapter::save_vector_json(
      run.path("vec_random.json"),
      adapter::random_vector(cfg.model.d_model, derive_seed(cfg.master_seed, kTagRandomVec),
                             cfg.adapter.layer));
  adapter::save_vector_json(
      run.path("vec_text_probe.json"),
      adapter::text_probe_vector(table, probe, cfg.adapter.probe_label, cfg.adapter.alphas,
                                 cfg.adapter.holdout_frac,
                                 derive_seed(cfg.master_seed, kTagTextProbe)));
  run.finish();
  return true;
}

namespace {

std::string vector_file(const RunConfig& cfg, const std::string& kind) {
  if (kind == "brain_axis") return "vec_brain_axis_" + std::to_string(cfg.sweep.axis) + ".json";
  return "vec_" + kind + ".json";
}

}  // namespace

bool run_steer(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "steer");
  run.need("lm.naxt");
  run.need("adapter.naxt");
  run.need("corpus.txt");
  run.need("labels.csv");
  for (const std::string& kind : cfg.sweep.vectors) run.need(vector_file(cfg, kind));
  for (const std::string& kind : cfg.sweep.vectors) {
    run.makes("sweep_" + kind + ".csv");
    run.makes("sweep_" + kind + "_tokens.csv");
    run.makes("sweep_" + kind + "_meta.json");
    run.makes("plot_" + kind + ".json");
  }
  if (run.fresh()) return false;
  run.check_inputs();

  const model::ModelWeights weights = model::load_weights(run.path("lm.naxt"));
  const adapter::Adapter ad = adapter::load_adapter(run.path("adapter"));
  const synth::LabelTables labels = synth::load_labels_csv(run.path("labels.csv"));
  const synth::Corpus corpus = synth::load_corpus(run.path("corpus.txt"));
  const std::vector<std::vector<int>> prompts = sweep_prompts(corpus, cfg);

  for (const std::string& kind : cfg.sweep.vectors) {
    harness::SweepSpec spec;
    spec.strengths = cfg.sweep.strengths;
    spec.n_prompts = cfg.sweep.n_prompts;
    spec.samples_per_strength = cfg.sweep.samples_per_strength;
    spec.gen_tokens = cfg.sweep.gen_tokens;
    spec.temperature = cfg.sweep.temperature;
    spec.layer = ad.layer;
    spec.vector = adapter::load_vector_json(run.path(vector_file(cfg, kind)));
    // Shared seed across vector kinds: baseline (strength 0) records are
    // identical between sweeps, and nonzero cells differ only by direction.
    spec.seed = derive_seed(cfg.master_seed, kTagSweep);

    const harness::SweepResult result = harness::run_sweep(weights, ad, labels, prompts, spec);
    harness::save_sweep_csv(run.path("sweep_" + kind + ".csv"), result);
    harness::save_sweep_tokens(run.path("sweep_" + kind + "_tokens.csv"), result);
    harness::save_plot_json(run.path("plot_" + kind + ".json"), result);

    nlohmann::json meta;
    meta["kind"] = kind;
    meta["provenance"] = spec.vector.provenance;
    meta["layer"] = spec.layer;
    meta["n_records"] = result.records.size();
    meta["invalid_records"] = result.invalid_records;
    std::ofstream f(run.path("sweep_" + kind + "_meta.json"), std::ios::trunc);
    if (!f) throw_io("cannot write sweep meta");
    f << meta.dump(2) << "\n";
  }
  run.finish();
  return true;
}

bool run_report(const StageContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  StageRunner run(ctx, "report");
  run.need("adapter.naxt");
  for (const std::string& kind : cfg.sweep.vectors) {
    run.need("sweep_" + kind + ".csv");
    run.need("sweep_" + kind + "_tokens.csv");
  }
  run.makes("effects.csv");
  run.makes("matched_effects.csv");
  run.makes("fdr_summary.csv");
  if (run.fresh()) return false;
  run.check_inputs();

  const adapter::Adapter ad = adapter::load_adapter(run.path("adapter"));
  const std::uint64_t seed = derive_seed(cfg.master_seed, kTagReport);
  const std::vector<std::string> metrics = {"logfreq_mean", "function_ratio", "animate_rate",
                                            "noun_ratio"};

  std::vector<harness::LabeledReport> effects;
  std::vector<harness::LabeledReport> matched;
  for (std::size_t ki = 0; ki < cfg.sweep.vectors.size(); ++ki) {
    const std::string& kind = cfg.sweep.vectors[ki];
    const harness::SweepResult result = harness::load_sweep_csv(
        run.path("sweep_" + kind + ".csv"), run.path("sweep_" + kind + "_tokens.csv"));

    std::vector<harness::EffectTarget> targets;
    for (int a = 0; a < ad.n_axes(); ++a)
      targets.push_back({harness::TargetKind::adapter_axis, a, ""});
    for (const std::string& m : metrics)
      targets.push_back({harness::TargetKind::text_metric, 0, m});

    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
      harness::EffectReport rep = harness::evaluate(result.records, targets[ti], 1000,
                                                    derive_seed(seed, ki, ti));
      rep.target = kind + ":" + rep.target;
      effects.push_back({"toy-lm", ad.layer, std::move(rep)});
      if (targets[ti].kind == harness::TargetKind::adapter_axis) {
        harness::EffectReport mrep = harness::ppl_match(result.records, targets[ti], 1000,
                                                        derive_seed(seed, ki, ti, 99));
        mrep.target = kind + ":" + mrep.target;
        matched.push_back({"toy-lm", ad.layer, std::move(mrep)});
      }
    }
  }

  harness::save_effects_csv(run.path("effects.csv"), effects);
  harness::save_effects_csv(run.path("matched_effects.csv"), matched);
  harness::save_fdr_csv(run.path("fdr_summary.csv"), harness::fdr_summary(effects, 0.05));
  run.finish();
  return true;
}

bool run_stage(const std::string& name, const StageContext& ctx) {
  if (name == "synth") return run_synth(ctx);
  if (name == "connectivity") return run_connectivity(ctx);
  if (name == "atlas") return run_atlas_stage(ctx);
  if (name == "axes") return run_axes_stage(ctx);
  if (name == "validate") return run_validate(ctx);
  if (name == "train-lm") return run_train_lm(ctx);
  if (name == "adapter") return run_adapter_stage(ctx);
  if (name == "steer") return run_steer(ctx);
  if (name == "report") return run_report(ctx);
  throw_invalid("unknown stage: " + name);
}

}  // namespace neuraxis::cli
