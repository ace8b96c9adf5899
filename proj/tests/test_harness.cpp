#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "neuraxis/adapter.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/harness.hpp"
#include "neuraxis/model.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/synth.hpp"
#include "neuraxis/table.hpp"
#include "test_support.hpp"

using namespace neuraxis;

namespace {

harness::GenerationRecord make_record(int prompt, double strength, int sample, double value,
                                      double ppl) {
  harness::GenerationRecord r;
  r.prompt_id = prompt;
  r.strength = strength;
  r.sample_id = sample;
  r.adapter_scores = Eigen::VectorXd::Constant(1, value);
  r.ppl = ppl;
  r.logfreq_mean = 2.0 * value;
  r.function_ratio = 0.5;
  r.animate_rate = 0.25;
  r.noun_ratio = 0.125;
  r.tokens = {prompt, sample};
  return r;
}

// Strengths {-1, 0, 1} per prompt; value = strength + 0.1 * prompt offset.
std::vector<harness::GenerationRecord> separated_records(int n_prompts) {
  std::vector<harness::GenerationRecord> recs;
  for (int p = 0; p < n_prompts; ++p)
    for (double s : {-1.0, 0.0, 1.0})
      recs.push_back(make_record(p, s, 0, s + 0.1 * p, 30.0 + p));
  return recs;
}

adapter::SteeringVector unit_vector(int d, std::uint64_t seed, int layer) {
  return adapter::random_vector(d, seed, layer);
}

harness::SweepSpec tiny_spec(int d_model) {
  harness::SweepSpec spec;
  spec.strengths = {-1.0, 0.0, 1.0};
  spec.n_prompts = 3;
  spec.samples_per_strength = 2;
  spec.gen_tokens = 8;
  spec.layer = 1;
  spec.vector = unit_vector(d_model, 21, 1);
  spec.temperature = 0.8;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("sweep specs reject inconsistent settings") {
  harness::SweepSpec spec = tiny_spec(16);
  CHECK_NOTHROW(spec.validate());

  harness::SweepSpec bad = spec;
  bad.strengths = {-1.0, 1.0};  // baseline anchor missing
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.strengths = {0.0};  // a baseline-only sweep is legal
  CHECK_NOTHROW(bad.validate());
  bad = spec;
  bad.n_prompts = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.samples_per_strength = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.gen_tokens = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.temperature = -0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.vector.direction.resize(0);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = spec;
  bad.vector.layer = 2;  // disagrees with bad.layer == 1
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("sweeps are deterministic and scored by the frozen model") {
  model::ModelConfig cfg;
  cfg.vocab_size = 51;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.context_len = 12;
  cfg.seed = 5;
  const model::ModelWeights w(cfg);

  synth::SynthSpec sspec;
  sspec.vocab_size = 50;
  sspec.seed = 33;
  const synth::LabelTables labels = synth::gen_vocabulary(sspec);

  adapter::Adapter ad;
  ad.layer = 1;
  ad.W.resize(2, cfg.d_model);
  Rng rng(77);
  for (Eigen::Index i = 0; i < ad.W.size(); ++i) ad.W(i) = rng.normal();
  ad.b = Eigen::VectorXd::Zero(2);
  ad.feat_mean = Eigen::VectorXd::Zero(cfg.d_model);
  ad.feat_sd = Eigen::VectorXd::Ones(cfg.d_model);

  const std::vector<std::vector<int>> prompts = {{50, 1}, {50, 2}, {50, 3, 4}};
  const harness::SweepSpec spec = tiny_spec(cfg.d_model);

  const auto res = harness::run_sweep(w, ad, labels, prompts, spec);
  CHECK(res.invalid_records == 0);
  REQUIRE(res.records.size() == 3u * 3u * 2u);

  // Cell order: prompt-major, then strength in spec order, then sample.
  std::size_t idx = 0;
  for (int p = 0; p < 3; ++p)
    for (double s : spec.strengths)
      for (int sj = 0; sj < 2; ++sj) {
        const auto& r = res.records[idx++];
        CHECK(r.prompt_id == p);
        CHECK(r.strength == s);
        CHECK(r.sample_id == sj);
        CHECK(static_cast<int>(r.tokens.size()) == spec.gen_tokens);
      }

  // Bit-identical on rerun.
  const auto res2 = harness::run_sweep(w, ad, labels, prompts, spec);
  REQUIRE(res2.records.size() == res.records.size());
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    CHECK(res2.records[i].tokens == res.records[i].tokens);
    CHECK(res2.records[i].adapter_scores == res.records[i].adapter_scores);
    CHECK(res2.records[i].ppl == res.records[i].ppl);
  }

  // Oracle for one record: chunked frozen forward over prompt+continuation,
  // mean continuation state at the sweep layer, adapter prediction on top.
  const auto& rec = res.records[5];  // prompt 0, strength 1, sample 1
  CHECK(rec.strength == 1.0);
  {
    std::vector<int> full = prompts[0];
    full.insert(full.end(), rec.tokens.begin(), rec.tokens.end());
    Eigen::VectorXd mean_state = Eigen::VectorXd::Zero(cfg.d_model);
    int n_states = 0;
    for (std::size_t start = 0; start < full.size();
         start += static_cast<std::size_t>(cfg.context_len)) {
      const std::size_t len =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.context_len), full.size() - start);
      const std::vector<int> chunk(full.begin() + static_cast<std::ptrdiff_t>(start),
                                   full.begin() + static_cast<std::ptrdiff_t>(start + len));
      const auto fwd = model::forward(w, chunk);
      for (std::size_t q = 0; q < len; ++q)
        if (start + q >= prompts[0].size()) {
          mean_state += fwd.trace.states[1].row(static_cast<Eigen::Index>(q)).transpose();
          ++n_states;
        }
    }
    mean_state /= n_states;
    CHECK((rec.adapter_scores - ad.predict(mean_state)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rec.ppl == doctest::Approx(model::perplexity(w, rec.tokens)).epsilon(1e-12));

    double lf = 0.0;
    int labeled = 0;
    for (int tok : rec.tokens)
      if (tok >= 0 && tok < labels.size()) {
        lf += labels.logfreq[static_cast<std::size_t>(tok)];
        ++labeled;
      }
    REQUIRE(labeled > 0);
    CHECK(rec.logfreq_mean == doctest::Approx(lf / labeled).epsilon(1e-12));
  }

  // Baseline cells ignore the steering direction entirely.
  harness::SweepSpec other = spec;
  other.vector = unit_vector(cfg.d_model, 99, 1);
  const auto res3 = harness::run_sweep(w, ad, labels, prompts, other);
  bool steered_cell_differs = false;
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    if (res.records[i].strength == 0.0) {
      CHECK(res3.records[i].tokens == res.records[i].tokens);
      CHECK(res3.records[i].ppl == res.records[i].ppl);
    } else if (res3.records[i].tokens != res.records[i].tokens) {
      steered_cell_differs = true;
    }
  }
  CHECK(steered_cell_differs);

  // Misconfigured sweeps are rejected up front.
  adapter::Adapter wrong_layer = ad;
  wrong_layer.layer = 0;
  CHECK_THROWS_AS((void)harness::run_sweep(w, wrong_layer, labels, prompts, spec), Error);
  harness::SweepSpec wide = spec;
  wide.vector.direction = Eigen::VectorXd::Ones(5);
  CHECK_THROWS_AS((void)harness::run_sweep(w, ad, labels, prompts, wide), Error);
  harness::SweepSpec many = spec;
  many.n_prompts = 4;
  CHECK_THROWS_AS((void)harness::run_sweep(w, ad, labels, prompts, many), Error);
  CHECK_THROWS_AS((void)harness::run_sweep(w, ad, labels, {{50, 1}, {}, {50, 2}}, spec), Error);
}

TEST_CASE("evaluate separates strength groups and is order-invariant") {
  const auto recs = separated_records(12);
  harness::EffectTarget target;
  target.kind = harness::TargetKind::adapter_axis;
  target.axis = 0;

  const auto rep = harness::evaluate(recs, target, 1000, 3);
  CHECK(rep.target == "axis_0");
  CHECK(rep.n_pos == 12);
  CHECK(rep.n_neg == 12);
  // Within-prompt difference is exactly 2 against offset sd ~0.36.
  CHECK(rep.d > 3.0);
  CHECK(rep.perm_p < 0.02);
  CHECK(rep.strength_r > 0.85);
  // PPL is strength-independent by construction.
  CHECK(std::abs(rep.ppl_d) < 1e-12);

  // Record order must not matter.
  auto shuffled = recs;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto rep2 = harness::evaluate(shuffled, target, 1000, 3);
  CHECK(rep2.d == rep.d);
  CHECK(rep2.perm_p == rep.perm_p);
  CHECK(rep2.strength_r == rep.strength_r);

  // Flipping strengths and keeping values negates d bit-exactly and keeps p.
  auto flipped = recs;
  for (auto& r : flipped) r.strength = -r.strength;
  const auto rep3 = harness::evaluate(flipped, target, 1000, 3);
  CHECK(rep3.d == -rep.d);
  CHECK(rep3.perm_p == rep.perm_p);
  CHECK(rep3.strength_r == -rep.strength_r);

  // Text metric targets read the named field.
  harness::EffectTarget metric;
  metric.kind = harness::TargetKind::text_metric;
  metric.metric = "logfreq_mean";
  const auto rep4 = harness::evaluate(recs, metric, 200, 3);
  CHECK(rep4.target == "logfreq_mean");
  CHECK(rep4.d > 3.0);  // logfreq_mean = 2 * value

  // A constant metric has no defined effect size.
  harness::EffectTarget flat;
  flat.kind = harness::TargetKind::text_metric;
  flat.metric = "function_ratio";
  CHECK_THROWS_AS((void)harness::evaluate(recs, flat, 200, 3), Error);
}

TEST_CASE("evaluate rejects degenerate inputs") {
  const auto recs = separated_records(4);
  harness::EffectTarget target;
  target.axis = 0;
  CHECK_THROWS_AS((void)harness::evaluate({}, target, 100, 1), Error);
  CHECK_THROWS_AS((void)harness::evaluate(recs, target, 0, 1), Error);

  std::vector<harness::GenerationRecord> baseline_only;
  for (int p = 0; p < 4; ++p) baseline_only.push_back(make_record(p, 0.0, 0, 1.0, 10.0));
  CHECK_THROWS_AS((void)harness::evaluate(baseline_only, target, 100, 1), Error);

  harness::EffectTarget wide;
  wide.axis = 3;  // records carry one adapter score
  CHECK_THROWS_AS((void)harness::evaluate(recs, wide, 100, 1), Error);
  harness::EffectTarget unknown;
  unknown.kind = harness::TargetKind::text_metric;
  unknown.metric = "sentiment";
  CHECK_THROWS_AS((void)harness::evaluate(recs, unknown, 100, 1), Error);
}

TEST_CASE("ppl matching is lossless when perplexity is balanced") {
  // Pos and neg share one PPL grid, values differ by a constant shift.
  std::vector<harness::GenerationRecord> recs;
  for (int i = 0; i < 12; ++i) {
    recs.push_back(make_record(i, 1.0, 0, 1.0 + 0.05 * i, 10.0 + i));
    recs.push_back(make_record(i, -1.0, 0, 0.05 * i, 10.0 + i));
  }
  harness::EffectTarget target;
  target.axis = 0;
  const auto matched = harness::ppl_match(recs, target, 500, 6);
  CHECK(matched.match_rate == doctest::Approx(1.0));
  CHECK_FALSE(matched.flagged);
  CHECK(matched.n_pos == 12);
  CHECK(matched.n_neg == 12);
  const auto plain = harness::evaluate(recs, target, 500, 6);
  CHECK(matched.d == doctest::Approx(plain.d).epsilon(1e-12));
  CHECK(std::abs(matched.ppl_d) < 1e-12);
  CHECK(matched.perm_p > 0.0);
  CHECK(matched.perm_p <= 1.0);
}

TEST_CASE("ppl matching collapses effects that ride on perplexity") {
  // The target value IS the perplexity, and PPL barely overlaps across
  // groups; spacings differ slightly so no two records tie exactly.
  std::vector<harness::GenerationRecord> recs;
  for (int i = 0; i < 12; ++i) {
    recs.push_back(make_record(i, 1.0, 0, 20.005 + 1.01 * i, 20.005 + 1.01 * i));
    recs.push_back(make_record(i, -1.0, 0, 10.0 + 1.01 * i, 10.0 + 1.01 * i));
  }
  harness::EffectTarget target;
  target.axis = 0;
  const auto plain = harness::evaluate(recs, target, 500, 7);
  CHECK(plain.d > 1.0);
  const auto matched = harness::ppl_match(recs, target, 500, 7);
  CHECK(matched.match_rate < 0.5);
  CHECK(matched.flagged);
  CHECK(std::abs(matched.d) < 0.5 * plain.d);

  // Too few records per group.
  std::vector<harness::GenerationRecord> few(recs.begin(), recs.begin() + 18);
  CHECK_THROWS_AS((void)harness::ppl_match(few, target, 100, 7), Error);
}

TEST_CASE("fdr summaries apply Benjamini-Hochberg over the report grid") {
  const std::vector<double> pvals = {0.01, 0.02, 0.2, 0.9};
  std::vector<harness::LabeledReport> reports;
  for (std::size_t i = 0; i < pvals.size(); ++i) {
    harness::LabeledReport lr;
    lr.model = i % 2 == 0 ? "brain" : "random";
    lr.layer = static_cast<int>(i);
    lr.report.target = "axis_" + std::to_string(i);
    lr.report.d = 0.1 * static_cast<double>(i + 1);
    lr.report.perm_p = pvals[i];
    reports.push_back(lr);
  }
  const auto summary = harness::fdr_summary(reports, 0.05);
  REQUIRE(summary.rows.size() == 4);
  CHECK(summary.q == 0.05);
  CHECK(summary.rows[0].significant);
  CHECK(summary.rows[1].significant);
  CHECK_FALSE(summary.rows[2].significant);
  CHECK_FALSE(summary.rows[3].significant);
  CHECK(summary.threshold == doctest::Approx(0.02));
  CHECK(summary.rows[2].model == "brain");
  CHECK(summary.rows[2].axis == "axis_2");
  CHECK(summary.rows[1].layer == 1);
  CHECK(summary.rows[1].perm_p == 0.02);

  const auto oracle = stats::bh_fdr(pvals, 0.05);
  for (std::size_t i = 0; i < pvals.size(); ++i)
    CHECK(summary.rows[i].significant == oracle.rejected[i]);

  CHECK_THROWS_AS((void)harness::fdr_summary({}, 0.05), Error);
}

TEST_CASE("sweep records and reports survive persistence") {
  testsup::TempDir dir("harness_io");
  harness::SweepResult res;
  Rng rng(12);
  for (int p = 0; p < 3; ++p)
    for (double s : {-2.0, 0.0, 2.0}) {
      harness::GenerationRecord r;
      r.prompt_id = p;
      r.strength = s;
      r.sample_id = p % 2;
      r.adapter_scores.resize(2);
      r.adapter_scores << rng.normal(), rng.normal();
      r.ppl = 10.0 + rng.uniform();
      r.logfreq_mean = -3.5 + rng.normal();
      r.function_ratio = 0.4;
      r.animate_rate = 0.3;
      r.noun_ratio = 0.2;
      const int len = 1 + rng.below(4);
      for (int t = 0; t < len; ++t) r.tokens.push_back(rng.below(50));
      res.records.push_back(std::move(r));
    }

  harness::save_sweep_csv(dir.file("records.csv"), res);
  harness::save_sweep_tokens(dir.file("tokens.csv"), res);
  const auto back = harness::load_sweep_csv(dir.file("records.csv"), dir.file("tokens.csv"));
  REQUIRE(back.records.size() == res.records.size());
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const auto& a = res.records[i];
    const auto& b = back.records[i];
    CHECK(b.prompt_id == a.prompt_id);
    CHECK(b.strength == a.strength);
    CHECK(b.sample_id == a.sample_id);
    CHECK(b.tokens == a.tokens);
    CHECK(b.adapter_scores == a.adapter_scores);
    CHECK(b.ppl == a.ppl);
    CHECK(b.logfreq_mean == a.logfreq_mean);
    CHECK(b.function_ratio == a.function_ratio);
    CHECK(b.animate_rate == a.animate_rate);
    CHECK(b.noun_ratio == a.noun_ratio);
  }

  // Evaluation on the roundtripped records is bit-identical.
  harness::EffectTarget target;
  target.axis = 1;
  const auto rep_a = harness::evaluate(res.records, target, 300, 9);
  const auto rep_b = harness::evaluate(back.records, target, 300, 9);
  CHECK(rep_a.d == rep_b.d);
  CHECK(rep_a.perm_p == rep_b.perm_p);

  std::vector<harness::LabeledReport> reports;
  harness::LabeledReport lr;
  lr.model = "brain_axis";
  lr.layer = 2;
  lr.report = rep_a;
  reports.push_back(lr);
  harness::save_effects_csv(dir.file("effects.csv"), reports);
  const CsvTable et = read_csv(dir.file("effects.csv"));
  REQUIRE(et.rows.size() == 1);
  CHECK(et.rows[0][static_cast<std::size_t>(et.column_index("model"))] == "brain_axis");
  CHECK(et.number(0, et.column_index("d")) == rep_a.d);
  CHECK(et.number(0, et.column_index("perm_p")) == rep_a.perm_p);

  const auto summary = harness::fdr_summary(reports, 0.05);
  harness::save_fdr_csv(dir.file("fdr.csv"), summary);
  const CsvTable ft = read_csv(dir.file("fdr.csv"));
  REQUIRE(ft.rows.size() == 1);
  CHECK(ft.number(0, ft.column_index("significant")) ==
        (summary.rows[0].significant ? 1.0 : 0.0));

  harness::save_plot_json(dir.file("plot.json"), res);
  std::ifstream pf(dir.file("plot.json"));
  REQUIRE(pf.good());
  nlohmann::json pj;
  pf >> pj;
  const std::vector<double> strengths = pj.at("strengths").get<std::vector<double>>();
  CHECK(strengths == std::vector<double>{-2.0, 0.0, 2.0});
  for (const char* key : {"axis_0", "axis_1", "logfreq_mean", "ppl"})
    REQUIRE(pj.at("per_strength").contains(key));
  // Hand-check the per-strength mean of axis 0 at strength -2.
  double acc = 0.0;
  int n = 0;
  for (const auto& r : res.records)
    if (r.strength == -2.0) {
      acc += r.adapter_scores(0);
      ++n;
    }
  const auto& axis0 = pj.at("per_strength").at("axis_0");
  CHECK(axis0.at("mean")[0].get<double>() == doctest::Approx(acc / n).epsilon(1e-12));
  CHECK(axis0.at("n")[0].get<int>() == n);
  const double mid = axis0.at("mean")[1].get<double>();
  CHECK(axis0.at("ci_low")[1].get<double>() <= mid);
  CHECK(axis0.at("ci_high")[1].get<double>() >= mid);
}

TEST_SUITE_END();
