#include "neuraxis/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "neuraxis/error.hpp"
#include "neuraxis/parallel.hpp"
#include "neuraxis/rng.hpp"
#include "neuraxis/stats.hpp"
#include "neuraxis/table.hpp"

namespace neuraxis::harness {

namespace {

constexpr std::uint64_t kTagCell = 0x51;
constexpr double kPplCaliper = 0.2;
constexpr double kMinMatchRate = 0.5;

double record_value(const GenerationRecord& r, const EffectTarget& t) {
  if (t.kind == TargetKind::adapter_axis) {
    require(t.axis >= 0 && t.axis < r.adapter_scores.size(), "target axis out of range");
    return r.adapter_scores(t.axis);
  }
  if (t.metric == "logfreq_mean") return r.logfreq_mean;
  if (t.metric == "function_ratio") return r.function_ratio;
  if (t.metric == "animate_rate") return r.animate_rate;
  if (t.metric == "noun_ratio") return r.noun_ratio;
  throw_invalid("unknown text metric: " + t.metric);
}

// Deterministic record order regardless of how callers assembled the list.
std::vector<std::size_t> sorted_record_order(const std::vector<GenerationRecord>& records) {
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (ra.prompt_id != rb.prompt_id) return ra.prompt_id < rb.prompt_id;
    if (ra.strength != rb.strength) return ra.strength < rb.strength;
    return ra.sample_id < rb.sample_id;
  });
  return order;
}

double group_d(const std::vector<double>& pos, const std::vector<double>& neg) {
  return stats::cohen_d(pos, neg);
}

// Sign-shuffle permutation p within prompt blocks; preserves per-prompt
// pos/neg counts exactly.
double block_perm_p(const std::vector<std::vector<double>>& block_values,
                    const std::vector<std::vector<int>>& block_signs, double observed_d,
                    int n_perm, std::uint64_t seed) {
  Rng rng(seed);
  int exceed = 0;
  std::vector<int> signs;
  std::vector<double> pos, neg;
  for (int it = 0; it < n_perm; ++it) {
    pos.clear();
    neg.clear();
    for (std::size_t b = 0; b < block_values.size(); ++b) {
      signs = block_signs[b];
      rng.shuffle(signs);
      for (std::size_t i = 0; i < signs.size(); ++i)
        (signs[i] > 0 ? pos : neg).push_back(block_values[b][i]);
    }
    if (std::abs(group_d(pos, neg)) >= std::abs(observed_d)) ++exceed;
  }
  return (1.0 + exceed) / (1.0 + n_perm);
}

struct SplitValues {
  std::vector<double> pos, neg;
  std::vector<std::vector<double>> block_values;  // nonzero-strength values per prompt
  std::vector<std::vector<int>> block_signs;
  std::vector<double> all_strengths, all_values;
};

SplitValues split_by_sign(const std::vector<GenerationRecord>& records, const EffectTarget& t) {
  SplitValues s;
  std::map<int, std::size_t> block_of;
  for (std::size_t i : sorted_record_order(records)) {
    const GenerationRecord& r = records[i];
    const double v = record_value(r, t);
    s.all_strengths.push_back(r.strength);
    s.all_values.push_back(v);
    if (r.strength == 0.0) continue;
    auto [it, inserted] = block_of.try_emplace(r.prompt_id, s.block_values.size());
    if (inserted) {
      s.block_values.emplace_back();
      s.block_signs.emplace_back();
    }
    s.block_values[it->second].push_back(v);
    s.block_signs[it->second].push_back(r.strength > 0.0 ? 1 : -1);
    (r.strength > 0.0 ? s.pos : s.neg).push_back(v);
  }
  return s;
}

}  // namespace

void SweepSpec::validate() const {
  require(std::find(strengths.begin(), strengths.end(), 0.0) != strengths.end(),
          "strengths must include 0 (baseline anchor)");
  require(n_prompts >= 2, "n_prompts must be >= 2");
  require(samples_per_strength >= 1, "samples_per_strength must be >= 1");
  require(gen_tokens >= 2, "gen_tokens must be >= 2");
  require(temperature >= 0.0, "temperature must be >= 0");
  require(vector.direction.size() >= 1, "steering vector is unset");
  require(vector.layer == layer, "steering vector layer disagrees with sweep layer");
}

std::string EffectTarget::name() const {
  if (kind == TargetKind::adapter_axis) return "axis_" + std::to_string(axis);
  return metric;
}

SweepResult run_sweep(const model::ModelWeights& w, const adapter::Adapter& ad,
                      const synth::LabelTables& labels,
                      const std::vector<std::vector<int>>& prompts, const SweepSpec& spec) {
  spec.validate();
  require(ad.layer == spec.layer, "adapter layer disagrees with sweep layer");
  require(static_cast<int>(prompts.size()) >= spec.n_prompts,
          "not enough prompts for the sweep");
  const model::ModelConfig& cfg = w.config();
  require(spec.vector.direction.size() == cfg.d_model,
          "steering direction dimension disagrees with the model");
  for (int p = 0; p < spec.n_prompts; ++p)
    require(!prompts[static_cast<std::size_t>(p)].empty(), "empty prompt sequence");

  const int n_strengths = static_cast<int>(spec.strengths.size());
  const std::int64_t n_cells =
      static_cast<std::int64_t>(spec.n_prompts) * n_strengths * spec.samples_per_strength;
  std::vector<GenerationRecord> slots(static_cast<std::size_t>(n_cells));
  std::vector<char> ok(static_cast<std::size_t>(n_cells), 0);

  parallel_for(n_cells, [&](std::int64_t cell) {
    const int sj = static_cast<int>(cell % spec.samples_per_strength);
    const int si = static_cast<int>((cell / spec.samples_per_strength) % n_strengths);
    const int p = static_cast<int>(cell / (spec.samples_per_strength * n_strengths));
    const double strength = spec.strengths[static_cast<std::size_t>(si)];
    const std::vector<int>& prompt = prompts[static_cast<std::size_t>(p)];

    GenerationRecord rec;
    rec.prompt_id = p;
    rec.strength = strength;
    rec.sample_id = sj;
    try {
      model::SteerSpec steer;
      steer.layer = spec.layer;
      steer.direction = spec.vector.direction;
      steer.strength = strength;
      const std::uint64_t cell_seed = derive_seed(spec.seed, kTagCell, static_cast<std::uint64_t>(cell));
      const model::GenResult gen =
          model::generate(w, prompt, spec.gen_tokens, spec.temperature, cell_seed, steer);
      rec.tokens = gen.tokens;

      // Frozen-model scoring: hidden states of the continuation positions,
      // conditioned on the prompt, processed in context-sized chunks.
      std::vector<int> full = prompt;
      full.insert(full.end(), gen.tokens.begin(), gen.tokens.end());
      Eigen::VectorXd mean_state = Eigen::VectorXd::Zero(cfg.d_model);
      std::int64_t n_states = 0;
      for (std::size_t start = 0; start < full.size();
           start += static_cast<std::size_t>(cfg.context_len)) {
        const std::size_t len =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.context_len), full.size() - start);
        const std::vector<int> chunk(full.begin() + static_cast<std::ptrdiff_t>(start),
                                     full.begin() + static_cast<std::ptrdiff_t>(start + len));
        const model::ForwardResult res = model::forward(w, chunk, std::nullopt, true);
        const Eigen::MatrixXd& state =
            res.trace.states[static_cast<std::size_t>(spec.layer)];
        for (std::size_t q = 0; q < len; ++q)
          if (start + q >= prompt.size()) {
            mean_state += state.row(static_cast<Eigen::Index>(q)).transpose();
            ++n_states;
          }
      }
      require(n_states > 0, "no continuation states collected");
      mean_state /= static_cast<double>(n_states);
      rec.adapter_scores = ad.predict(mean_state);

      rec.ppl = model::perplexity(w, gen.tokens);

      double lf = 0.0, fr = 0.0, an = 0.0, nn = 0.0;
      int labeled = 0;
      for (int tok : gen.tokens) {
        if (tok < 0 || tok >= labels.size()) continue;  // BOS / padding ids carry no labels
        const auto idx = static_cast<std::size_t>(tok);
        lf += labels.logfreq[idx];
        fr += labels.is_function[idx];
        an += labels.animate[idx];
        nn += labels.pos_id[idx] == synth::kPosNoun ? 1.0 : 0.0;
        ++labeled;
      }
      require(labeled > 0, "continuation has no labeled tokens");
      rec.logfreq_mean = lf / labeled;
      rec.function_ratio = fr / labeled;
      rec.animate_rate = an / labeled;
      rec.noun_ratio = nn / labeled;
      require(std::isfinite(rec.ppl) && rec.ppl > 0.0, "non-finite perplexity");

      slots[static_cast<std::size_t>(cell)] = std::move(rec);
      ok[static_cast<std::size_t>(cell)] = 1;
    } catch (const Error&) {
      ok[static_cast<std::size_t>(cell)] = 0;
    }
  });

  SweepResult result;
  for (std::int64_t cell = 0; cell < n_cells; ++cell) {
    if (ok[static_cast<std::size_t>(cell)])
      result.records.push_back(std::move(slots[static_cast<std::size_t>(cell)]));
    else
      ++result.invalid_records;
  }
  require(!result.records.empty(), "every sweep cell failed");
  return result;
}

EffectReport evaluate(const std::vector<GenerationRecord>& records, const EffectTarget& target,
                      int n_perm, std::uint64_t seed) {
  require(!records.empty(), "evaluate: no records");
  require(n_perm >= 1, "evaluate: n_perm must be >= 1");
  const SplitValues v = split_by_sign(records, target);
  require(!v.pos.empty() && !v.neg.empty(), "evaluate: both strength groups must be nonempty");

  EffectReport rep;
  rep.target = target.name();
  rep.n_pos = static_cast<int>(v.pos.size());
  rep.n_neg = static_cast<int>(v.neg.size());
  rep.d = group_d(v.pos, v.neg);
  rep.perm_p = block_perm_p(v.block_values, v.block_signs, rep.d, n_perm, derive_seed(seed, 2));
  rep.strength_r = stats::pearson_r(v.all_strengths, v.all_values);

  // Identical computation on perplexity.
  std::vector<std::vector<double>> ppl_blocks(v.block_values.size());
  std::vector<double> ppl_pos, ppl_neg;
  {
    std::map<int, std::size_t> block_of;
    for (std::size_t i : sorted_record_order(records)) {
      const GenerationRecord& r = records[i];
      if (r.strength == 0.0) continue;
      auto [it, inserted] = block_of.try_emplace(r.prompt_id, block_of.size());
      ppl_blocks[it->second].push_back(r.ppl);
      (r.strength > 0.0 ? ppl_pos : ppl_neg).push_back(r.ppl);
    }
  }
  rep.ppl_d = group_d(ppl_pos, ppl_neg);
  rep.ppl_perm_p =
      block_perm_p(ppl_blocks, v.block_signs, rep.ppl_d, n_perm, derive_seed(seed, 3));
  return rep;
}

EffectReport ppl_match(const std::vector<GenerationRecord>& records, const EffectTarget& target,
                       int n_perm, std::uint64_t seed) {
  require(!records.empty(), "ppl_match: no records");
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i : sorted_record_order(records)) {
    if (records[i].strength > 0.0) pos_idx.push_back(i);
    if (records[i].strength < 0.0) neg_idx.push_back(i);
  }
  require(pos_idx.size() >= 10 && neg_idx.size() >= 10,
          "ppl_match requires >= 10 records per group");

  std::vector<double> pooled_ppl;
  for (std::size_t i : pos_idx) pooled_ppl.push_back(records[i].ppl);
  for (std::size_t i : neg_idx) pooled_ppl.push_back(records[i].ppl);
  const double caliper = kPplCaliper * stats::sd(pooled_ppl);

  std::vector<char> used(neg_idx.size(), 0);
  std::vector<std::size_t> m_pos, m_neg;
  for (std::size_t pi : pos_idx) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = neg_idx.size();
    for (std::size_t j = 0; j < neg_idx.size(); ++j) {
      if (used[j]) continue;
      const double dist = std::abs(records[pi].ppl - records[neg_idx[j]].ppl);
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    if (best_j < neg_idx.size() && best <= caliper) {
      used[best_j] = 1;
      m_pos.push_back(pi);
      m_neg.push_back(neg_idx[best_j]);
    }
  }

  EffectReport rep;
  rep.target = target.name();
  rep.n_pos = static_cast<int>(m_pos.size());
  rep.n_neg = static_cast<int>(m_neg.size());
  rep.match_rate = static_cast<double>(m_pos.size()) / static_cast<double>(pos_idx.size());
  rep.flagged = rep.match_rate < kMinMatchRate || m_pos.size() < 2;
  if (m_pos.size() < 2) {
    rep.d = std::numeric_limits<double>::quiet_NaN();
    rep.ppl_d = std::numeric_limits<double>::quiet_NaN();
    rep.strength_r = std::numeric_limits<double>::quiet_NaN();
    return rep;
  }

  std::vector<double> vp, vn, pp, pn, ms, mv;
  for (std::size_t i : m_pos) {
    vp.push_back(record_value(records[i], target));
    pp.push_back(records[i].ppl);
    ms.push_back(records[i].strength);
    mv.push_back(vp.back());
  }
  for (std::size_t i : m_neg) {
    vn.push_back(record_value(records[i], target));
    pn.push_back(records[i].ppl);
    ms.push_back(records[i].strength);
    mv.push_back(vn.back());
  }
  rep.d = stats::cohen_d(vp, vn);
  rep.perm_p = stats::perm_test(vp, vn, stats::TwoSampleStat::d, n_perm, derive_seed(seed, 4)).p;
  rep.ppl_d = stats::cohen_d(pp, pn);
  rep.ppl_perm_p =
      stats::perm_test(pp, pn, stats::TwoSampleStat::d, n_perm, derive_seed(seed, 5)).p;
  rep.strength_r = stats::pearson_r(ms, mv);
  return rep;
}

FdrSummary fdr_summary(const std::vector<LabeledReport>& reports, double q) {
  require(!reports.empty(), "fdr_summary: no reports");
  std::vector<double> pvals;
  for (const auto& r : reports) pvals.push_back(r.report.perm_p);
  const stats::FdrResult fdr = stats::bh_fdr(pvals, q);

  FdrSummary summary;
  summary.q = q;
  summary.threshold = fdr.threshold;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    FdrRow row;
    row.model = reports[i].model;
    row.axis = reports[i].report.target;
    row.layer = reports[i].layer;
    row.d = reports[i].report.d;
    row.perm_p = reports[i].report.perm_p;
    row.significant = fdr.rejected[i];
    summary.rows.push_back(std::move(row));
  }
  return summary;
}

void save_sweep_csv(const std::string& path, const SweepResult& result) {
  require(!result.records.empty(), "no records to save");
  const int n_axes = static_cast<int>(result.records.front().adapter_scores.size());
  std::vector<std::string> cols = {"prompt_id",    "strength",       "sample_id",
                                   "n_tokens",     "ppl",            "logfreq_mean",
                                   "function_ratio", "animate_rate", "noun_ratio"};
  for (int a = 0; a < n_axes; ++a) cols.push_back("score_" + std::to_string(a));
  CsvWriter w(cols);
  for (const auto& r : result.records) {
    require(static_cast<int>(r.adapter_scores.size()) == n_axes,
            "inconsistent adapter score width");
    w.begin_row();
    w.cell(static_cast<std::int64_t>(r.prompt_id));
    w.cell(r.strength);
    w.cell(static_cast<std::int64_t>(r.sample_id));
    w.cell(static_cast<std::int64_t>(r.tokens.size()));
    w.cell(r.ppl);
    w.cell(r.logfreq_mean);
    w.cell(r.function_ratio);
    w.cell(r.animate_rate);
    w.cell(r.noun_ratio);
    for (int a = 0; a < n_axes; ++a) w.cell(r.adapter_scores(a));
    w.end_row();
  }
  w.save(path);
}

void save_sweep_tokens(const std::string& path, const SweepResult& result) {
  CsvWriter w({"prompt_id", "strength", "sample_id", "tokens"});
  for (const auto& r : result.records) {
    std::string joined;
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      if (i) joined += ' ';
      joined += std::to_string(r.tokens[i]);
    }
    w.begin_row();
    w.cell(static_cast<std::int64_t>(r.prompt_id));
    w.cell(r.strength);
    w.cell(static_cast<std::int64_t>(r.sample_id));
    w.cell(joined);
    w.end_row();
  }
  w.save(path);
}

SweepResult load_sweep_csv(const std::string& records_path, const std::string& tokens_path) {
  const CsvTable rt = read_csv(records_path);
  const CsvTable tt = read_csv(tokens_path);
  require(rt.rows.size() == tt.rows.size(), "record and token tables disagree in length");

  int n_axes = 0;
  while (true) {
    bool found = false;
    for (const auto& c : rt.columns)
      if (c == "score_" + std::to_string(n_axes)) found = true;
    if (!found) break;
    ++n_axes;
  }
  require(n_axes >= 1, "record table has no score columns");

  const int c_prompt = rt.column_index("prompt_id");
  const int c_strength = rt.column_index("strength");
  const int c_sample = rt.column_index("sample_id");
  const int c_ppl = rt.column_index("ppl");
  const int c_lf = rt.column_index("logfreq_mean");
  const int c_fr = rt.column_index("function_ratio");
  const int c_an = rt.column_index("animate_rate");
  const int c_nn = rt.column_index("noun_ratio");
  std::vector<int> c_scores;
  for (int a = 0; a < n_axes; ++a)
    c_scores.push_back(rt.column_index("score_" + std::to_string(a)));
  const int c_tokens = tt.column_index("tokens");

  SweepResult result;
  for (std::size_t i = 0; i < rt.rows.size(); ++i) {
    GenerationRecord r;
    r.prompt_id = static_cast<int>(std::lround(rt.number(i, c_prompt)));
    r.strength = rt.number(i, c_strength);
    r.sample_id = static_cast<int>(std::lround(rt.number(i, c_sample)));
    r.ppl = rt.number(i, c_ppl);
    r.logfreq_mean = rt.number(i, c_lf);
    r.function_ratio = rt.number(i, c_fr);
    r.animate_rate = rt.number(i, c_an);
    r.noun_ratio = rt.number(i, c_nn);
    r.adapter_scores.resize(n_axes);
    for (int a = 0; a < n_axes; ++a)
      r.adapter_scores(a) = rt.number(i, c_scores[static_cast<std::size_t>(a)]);
    std::istringstream ts(tt.rows[i][static_cast<std::size_t>(c_tokens)]);
    int tok;
    while (ts >> tok) r.tokens.push_back(tok);
    result.records.push_back(std::move(r));
  }
  return result;
}

void save_effects_csv(const std::string& path, const std::vector<LabeledReport>& reports) {
  CsvWriter w({"model", "layer", "target", "d", "perm_p", "strength_r", "ppl_d", "ppl_perm_p",
               "n_pos", "n_neg", "match_rate", "flagged"});
  for (const auto& lr : reports) {
    const EffectReport& r = lr.report;
    w.begin_row();
    w.cell(lr.model);
    w.cell(static_cast<std::int64_t>(lr.layer));
    w.cell(r.target);
    w.cell(r.d);
    w.cell(r.perm_p);
    w.cell(r.strength_r);
    w.cell(r.ppl_d);
    w.cell(r.ppl_perm_p);
    w.cell(static_cast<std::int64_t>(r.n_pos));
    w.cell(static_cast<std::int64_t>(r.n_neg));
    w.cell(r.match_rate);
    w.cell(static_cast<std::int64_t>(r.flagged ? 1 : 0));
    w.end_row();
  }
  w.save(path);
}

void save_fdr_csv(const std::string& path, const FdrSummary& summary) {
  CsvWriter w({"model", "axis", "layer", "d", "perm_p", "significant"});
  for (const auto& row : summary.rows) {
    w.begin_row();
    w.cell(row.model);
    w.cell(row.axis);
    w.cell(static_cast<std::int64_t>(row.layer));
    w.cell(row.d);
    w.cell(row.perm_p);
    w.cell(static_cast<std::int64_t>(row.significant ? 1 : 0));
    w.end_row();
  }
  w.save(path);
}

void save_plot_json(const std::string& path, const SweepResult& result) {
  require(!result.records.empty(), "no records to plot");
  std::vector<double> strengths;
  for (const auto& r : result.records) strengths.push_back(r.strength);
  std::sort(strengths.begin(), strengths.end());
  strengths.erase(std::unique(strengths.begin(), strengths.end()), strengths.end());

  const int n_axes = static_cast<int>(result.records.front().adapter_scores.size());
  std::vector<EffectTarget> targets;
  for (int a = 0; a < n_axes; ++a)
    targets.push_back({TargetKind::adapter_axis, a, ""});
  for (const char* m : {"logfreq_mean", "function_ratio", "animate_rate", "noun_ratio", "ppl"})
    targets.push_back({TargetKind::text_metric, 0, m});

  nlohmann::json j;
  j["strengths"] = strengths;
  for (const auto& t : targets) {
    std::vector<double> means, lows, highs;
    std::vector<int> counts;
    for (double s : strengths) {
      std::vector<double> vals;
      for (const auto& r : result.records)
        if (r.strength == s)
          vals.push_back(t.kind == TargetKind::text_metric && t.metric == "ppl"
                             ? r.ppl
                             : record_value(r, t));
      const double m = stats::mean(vals);
      const double sdev = vals.size() >= 2 ? stats::sd(vals) : 0.0;
      const double half = 1.959963984540054 * sdev / std::sqrt(static_cast<double>(vals.size()));
      means.push_back(m);
      lows.push_back(m - half);
      highs.push_back(m + half);
      counts.push_back(static_cast<int>(vals.size()));
    }
    const std::string name = t.kind == TargetKind::text_metric && t.metric == "ppl"
                                 ? std::string("ppl")
                                 : t.name();
    j["per_strength"][name] = {
        {"mean", means}, {"ci_low", lows}, {"ci_high", highs}, {"n", counts}};
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw_io("cannot write plot data: " + path);
  f << j.dump(2) << "\n";
}

}  // namespace neuraxis::harness
