#include "neuraxis/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "neuraxis/error.hpp"
#include "neuraxis/signal.hpp"
#include "neuraxis/table.hpp"

namespace neuraxis::cli {

namespace {

struct TomlValue {
  enum class Kind { boolean, integer, floating, text, array };
  Kind kind = Kind::integer;
  bool b = false;
  long long i = 0;
  double d = 0.0;
  std::string s;
  std::vector<TomlValue> arr;
  int line = 0;
};

[[noreturn]] void config_fail(int line, const std::string& msg) {
  throw_config("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Removes a trailing comment, respecting double-quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

TomlValue parse_scalar(const std::string& raw, int line) {
  TomlValue v;
  v.line = line;
  const std::string t = trim(raw);
  if (t.empty()) config_fail(line, "empty value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') config_fail(line, "unterminated string");
    const std::string body = t.substr(1, t.size() - 2);
    if (body.find('"') != std::string::npos) config_fail(line, "embedded quote in string");
    v.kind = TomlValue::Kind::text;
    v.s = body;
    return v;
  }
  if (t == "true" || t == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.b = t == "true";
    return v;
  }
  const bool looks_float = t.find_first_of(".eE") != std::string::npos;
  std::size_t used = 0;
  try {
    if (looks_float) {
      v.kind = TomlValue::Kind::floating;
      v.d = std::stod(t, &used);
    } else {
      v.kind = TomlValue::Kind::integer;
      v.i = std::stoll(t, &used);
      v.d = static_cast<double>(v.i);
    }
  } catch (const std::exception&) {
    config_fail(line, "not a value: '" + t + "'");
  }
  if (used != t.size()) config_fail(line, "trailing characters in value: '" + t + "'");
  return v;
}

TomlValue parse_value(const std::string& raw, int line) {
  const std::string t = trim(raw);
  if (t.empty()) config_fail(line, "empty value");
  if (t.front() != '[') return parse_scalar(t, line);
  if (t.back() != ']') config_fail(line, "unterminated array");
  TomlValue v;
  v.kind = TomlValue::Kind::array;
  v.line = line;
  const std::string body = trim(t.substr(1, t.size() - 2));
  if (body.empty()) return v;
  std::string item;
  bool in_str = false;
  for (char c : body) {
    if (c == '"') in_str = !in_str;
    if (c == ',' && !in_str) {
      v.arr.push_back(parse_scalar(item, line));
      item.clear();
    } else {
      item += c;
    }
  }
  v.arr.push_back(parse_scalar(item, line));
  return v;
}

class KeyMap {
 public:
  explicit KeyMap(const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const std::string s = trim(strip_comment(raw));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') config_fail(line, "unterminated section header");
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) config_fail(line, "empty section name");
        continue;
      }
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos) config_fail(line, "expected key = value");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) config_fail(line, "empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (values_.count(full)) config_fail(line, "duplicate key: " + full);
      values_.emplace(full, parse_value(s.substr(eq + 1), line));
    }
  }

  const TomlValue* take(const std::string& full_key) {
    auto it = values_.find(full_key);
    if (it == values_.end()) return nullptr;
    taken_.push_back(full_key);
    return &it->second;
  }

  void reject_leftovers() const {
    for (const auto& [key, value] : values_) {
      if (std::find(taken_.begin(), taken_.end(), key) == taken_.end())
        config_fail(value.line, "unknown key: " + key);
    }
  }

 private:
  std::map<std::string, TomlValue> values_;
  std::vector<std::string> taken_;
};

void get(KeyMap& km, const std::string& key, double& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::floating && v->kind != TomlValue::Kind::integer)
      config_fail(v->line, key + " must be a number");
    out = v->d;
  }
}

void get(KeyMap& km, const std::string& key, int& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::integer) config_fail(v->line, key + " must be an integer");
    out = static_cast<int>(v->i);
  }
}

void get(KeyMap& km, const std::string& key, std::uint64_t& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::integer || v->i < 0)
      config_fail(v->line, key + " must be a non-negative integer");
    out = static_cast<std::uint64_t>(v->i);
  }
}

void get(KeyMap& km, const std::string& key, std::string& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::text) config_fail(v->line, key + " must be a string");
    out = v->s;
  }
}

void get(KeyMap& km, const std::string& key, std::vector<double>& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::array) config_fail(v->line, key + " must be an array");
    out.clear();
    for (const TomlValue& e : v->arr) {
      if (e.kind != TomlValue::Kind::floating && e.kind != TomlValue::Kind::integer)
        config_fail(v->line, key + " must contain numbers");
      out.push_back(e.d);
    }
  }
}

void get(KeyMap& km, const std::string& key, std::vector<std::string>& out) {
  if (const TomlValue* v = km.take(key)) {
    if (v->kind != TomlValue::Kind::array) config_fail(v->line, key + " must be an array");
    out.clear();
    for (const TomlValue& e : v->arr) {
      if (e.kind != TomlValue::Kind::text) config_fail(v->line, key + " must contain strings");
      out.push_back(e.s);
    }
  }
}

void append_list(std::string& s, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_g17(v[i]);
  }
  s += "\n";
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  KeyMap km(text);
  RunConfig c;

  get(km, "master_seed", c.master_seed);

  get(km, "synth.n_subjects", c.synth.n_subjects);
  get(km, "synth.n_runs", c.synth.n_runs);
  get(km, "synth.n_channels", c.synth.n_channels);
  get(km, "synth.sfreq", c.synth.sfreq);
  get(km, "synth.duration_s", c.synth.duration_s);
  get(km, "synth.band_low", c.synth.band.first);
  get(km, "synth.band_high", c.synth.band.second);
  get(km, "synth.n_latent_axes", c.synth.n_latent_axes);
  get(km, "synth.word_rate", c.synth.word_rate);
  get(km, "synth.vocab_size", c.synth.vocab_size);
  get(km, "synth.coupling_gain", c.synth.coupling_gain);

  get(km, "signal.method", c.signal.method);
  get(km, "signal.window_s", c.signal.window_s);
  get(km, "signal.step_s", c.signal.step_s);
  get(km, "signal.taps", c.signal.taps);
  get(km, "signal.edge_trim_s", c.signal.edge_trim_s);
  get(km, "signal.n_components", c.signal.n_components);

  get(km, "atlas.lags", c.atlas.lags);
  get(km, "atlas.alphas", c.atlas.alphas);
  get(km, "atlas.n_folds", c.atlas.n_folds);

  get(km, "axes.n_axes", c.axes.n_axes);
  get(km, "axes.n_perm", c.axes.n_perm);
  get(km, "axes.n_boot", c.axes.n_boot);

  get(km, "model.d_model", c.model.d_model);
  get(km, "model.n_layers", c.model.n_layers);
  get(km, "model.n_heads", c.model.n_heads);
  get(km, "model.d_ff", c.model.d_ff);
  get(km, "model.context_len", c.model.context_len);
  get(km, "model.vocab_size", c.model.vocab_size);
  get(km, "model.batch_size", c.model.batch_size);
  get(km, "model.n_steps", c.model.n_steps);
  get(km, "model.lr", c.model.lr);
  get(km, "model.warmup_steps", c.model.warmup_steps);
  get(km, "model.grad_clip", c.model.grad_clip);
  get(km, "model.val_frac", c.model.val_frac);
  get(km, "model.eval_every", c.model.eval_every);
  get(km, "model.n_sequences", c.model.n_sequences);
  get(km, "model.seq_len", c.model.seq_len);

  get(km, "adapter.layer", c.adapter.layer);
  get(km, "adapter.holdout_frac", c.adapter.holdout_frac);
  get(km, "adapter.n_top", c.adapter.n_top);
  get(km, "adapter.probe_label", c.adapter.probe_label);
  get(km, "adapter.alphas", c.adapter.alphas);

  get(km, "sweep.strengths", c.sweep.strengths);
  get(km, "sweep.n_prompts", c.sweep.n_prompts);
  get(km, "sweep.samples_per_strength", c.sweep.samples_per_strength);
  get(km, "sweep.gen_tokens", c.sweep.gen_tokens);
  get(km, "sweep.temperature", c.sweep.temperature);
  get(km, "sweep.prompt_len", c.sweep.prompt_len);
  get(km, "sweep.axis", c.sweep.axis);
  get(km, "sweep.vectors", c.sweep.vectors);

  km.reject_leftovers();
  c.synth.seed = c.master_seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_config("cannot read config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

void RunConfig::validate() const {
  auto check = [](bool cond, const std::string& msg) {
    if (!cond) throw_config(msg);
  };
  try {
    ::neuraxis::signal::conn_method_from_string(signal.method);
  } catch (const Error&) {
    throw_config("signal.method must be plv or wpli");
  }
  check(signal.window_s > 0 && signal.step_s > 0, "signal window/step must be positive");
  check(signal.edge_trim_s >= 0, "signal.edge_trim_s must be >= 0");
  check(signal.n_components >= 1, "signal.n_components must be >= 1");
  check(!atlas.lags.empty(), "atlas.lags must be nonempty");
  check(!atlas.alphas.empty(), "atlas.alphas must be nonempty");
  check(atlas.n_folds >= 2, "atlas.n_folds must be >= 2");
  check(axes.n_axes >= 1, "axes.n_axes must be >= 1");
  check(axes.n_axes <= signal.n_components, "axes.n_axes must be <= signal.n_components");
  check(axes.n_perm >= 1 && axes.n_boot >= 1, "axes.n_perm and n_boot must be >= 1");
  check(model.vocab_size > synth.vocab_size, "model.vocab_size must exceed synth vocab + BOS");
  check(model.seq_len >= 2, "model.seq_len must be >= 2");
  check(model.n_sequences >= 2, "model.n_sequences must be >= 2");
  check(adapter.layer >= 0 && adapter.layer <= model.n_layers,
        "adapter.layer must be a hidden-state index (0..n_layers)");
  check(adapter.holdout_frac > 0 && adapter.holdout_frac < 1,
        "adapter.holdout_frac must be in (0, 1)");
  check(adapter.n_top >= 1, "adapter.n_top must be >= 1");
  check(adapter.probe_label == "logfreq" || adapter.probe_label == "emb_change" ||
            adapter.probe_label == "concreteness",
        "adapter.probe_label must be logfreq, emb_change, or concreteness");
  check(!adapter.alphas.empty(), "adapter.alphas must be nonempty");
  check(std::find(sweep.strengths.begin(), sweep.strengths.end(), 0.0) != sweep.strengths.end(),
        "sweep.strengths must include 0");
  check(sweep.n_prompts >= 2, "sweep.n_prompts must be >= 2");
  check(sweep.samples_per_strength >= 1, "sweep.samples_per_strength must be >= 1");
  check(sweep.gen_tokens >= 2, "sweep.gen_tokens must be >= 2");
  check(sweep.temperature >= 0, "sweep.temperature must be >= 0");
  check(sweep.prompt_len >= 1 && sweep.prompt_len <= model.seq_len,
        "sweep.prompt_len must be in [1, model.seq_len]");
  check(sweep.axis >= 0 && sweep.axis < axes.n_axes, "sweep.axis must index an axis");
  check(!sweep.vectors.empty(), "sweep.vectors must be nonempty");
  for (const std::string& v : sweep.vectors)
    check(v == "brain_axis" || v == "actadd" || v == "random" || v == "text_probe",
          "unknown sweep vector kind: " + v);
}

std::string RunConfig::canonical() const {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  kv("master_seed", std::to_string(master_seed));
  kv("synth.n_subjects", std::to_string(synth.n_subjects));
  kv("synth.n_runs", std::to_string(synth.n_runs));
  kv("synth.n_channels", std::to_string(synth.n_channels));
  kv("synth.sfreq", format_g17(synth.sfreq));
  kv("synth.duration_s", format_g17(synth.duration_s));
  kv("synth.band_low", format_g17(synth.band.first));
  kv("synth.band_high", format_g17(synth.band.second));
  kv("synth.n_latent_axes", std::to_string(synth.n_latent_axes));
  kv("synth.word_rate", format_g17(synth.word_rate));
  kv("synth.vocab_size", std::to_string(synth.vocab_size));
  kv("synth.coupling_gain", format_g17(synth.coupling_gain));
  kv("signal.method", signal.method);
  kv("signal.window_s", format_g17(signal.window_s));
  kv("signal.step_s", format_g17(signal.step_s));
  kv("signal.taps", std::to_string(signal.taps));
  kv("signal.edge_trim_s", format_g17(signal.edge_trim_s));
  kv("signal.n_components", std::to_string(signal.n_components));
  s += "atlas.lags=";
  append_list(s, atlas.lags);
  s += "atlas.alphas=";
  append_list(s, atlas.alphas);
  kv("atlas.n_folds", std::to_string(atlas.n_folds));
  kv("axes.n_axes", std::to_string(axes.n_axes));
  kv("axes.n_perm", std::to_string(axes.n_perm));
  kv("axes.n_boot", std::to_string(axes.n_boot));
  kv("model.d_model", std::to_string(model.d_model));
  kv("model.n_layers", std::to_string(model.n_layers));
  kv("model.n_heads", std::to_string(model.n_heads));
  kv("model.d_ff", std::to_string(model.d_ff));
  kv("model.context_len", std::to_string(model.context_len));
  kv("model.vocab_size", std::to_string(model.vocab_size));
  kv("model.batch_size", std::to_string(model.batch_size));
  kv("model.n_steps", std::to_string(model.n_steps));
  kv("model.lr", format_g17(model.lr));
  kv("model.warmup_steps", std::to_string(model.warmup_steps));
  kv("model.grad_clip", format_g17(model.grad_clip));
  kv("model.val_frac", format_g17(model.val_frac));
  kv("model.eval_every", std::to_string(model.eval_every));
  kv("model.n_sequences", std::to_string(model.n_sequences));
  kv("model.seq_len", std::to_string(model.seq_len));
  kv("adapter.layer", std::to_string(adapter.layer));
  kv("adapter.holdout_frac", format_g17(adapter.holdout_frac));
  kv("adapter.n_top", std::to_string(adapter.n_top));
  kv("adapter.probe_label", adapter.probe_label);
  s += "adapter.alphas=";
  append_list(s, adapter.alphas);
  s += "sweep.strengths=";
  append_list(s, sweep.strengths);
  kv("sweep.n_prompts", std::to_string(sweep.n_prompts));
  kv("sweep.samples_per_strength", std::to_string(sweep.samples_per_strength));
  kv("sweep.gen_tokens", std::to_string(sweep.gen_tokens));
  kv("sweep.temperature", format_g17(sweep.temperature));
  kv("sweep.prompt_len", std::to_string(sweep.prompt_len));
  kv("sweep.axis", std::to_string(sweep.axis));
  s += "sweep.vectors=";
  for (std::size_t i = 0; i < sweep.vectors.size(); ++i) {
    if (i) s += ",";
    s += sweep.vectors[i];
  }
  s += "\n";
  return s;
}

std::uint64_t RunConfig::hash() const {
  const std::string s = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace neuraxis::cli
