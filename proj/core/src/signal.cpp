#include "neuraxis/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "fft_util.hpp"
#include "json.hpp"
#include "neuraxis/error.hpp"
#include "neuraxis/parallel.hpp"
#include "neuraxis/tensor_archive.hpp"

namespace neuraxis::signal {

using std::numbers::pi;

std::string to_string(ConnMethod m) { return m == ConnMethod::plv ? "plv" : "wpli"; }

ConnMethod conn_method_from_string(const std::string& s) {
  if (s == "plv") return ConnMethod::plv;
  if (s == "wpli") return ConnMethod::wpli;
  throw_invalid("unknown connectivity method: " + s);
}

std::vector<double> design_bandpass_taps(double sfreq, double low, double high, int n_taps) {
  require(low > 0.0 && low < high && high < sfreq / 2.0, "band must satisfy 0 < low < high < Nyquist");
  if (n_taps <= 0) {
    // 6*sfreq/low keeps the two-pass response within 1 dB passband ripple and
    // beyond 40 dB attenuation at 0.5*low and 1.5*high.
    n_taps = static_cast<int>(std::ceil(6.0 * sfreq / low));
    if (n_taps % 2 == 0) ++n_taps;
  }
  require(n_taps % 2 == 1, "tap count must be odd");

  // Cutoffs at the midpoints of the transition bands [low/2, low] and
  // [high, 1.5*high]; each single pass then contributes half the required
  // stopband attenuation since the filter is applied forward and backward.
  const double f1 = 0.75 * low / sfreq;
  const double f2 = 1.25 * high / sfreq;
  const int mid = n_taps / 2;

  std::vector<double> h(static_cast<std::size_t>(n_taps));
  for (int n = 0; n < n_taps; ++n) {
    const int k = n - mid;
    double ideal;
    if (k == 0) {
      ideal = 2.0 * (f2 - f1);
    } else {
      const double x = pi * static_cast<double>(k);
      ideal = (std::sin(2.0 * f2 * x) - std::sin(2.0 * f1 * x)) / x;
    }
    const double w = 0.54 - 0.46 * std::cos(2.0 * pi * n / (n_taps - 1));
    h[static_cast<std::size_t>(n)] = ideal * w;
  }
  return h;
}

Recording bandpass_filter(const Recording& rec, std::pair<double, double> band, int n_taps) {
  const auto [low, high] = band;
  require(low > 0.0 && low < high, "band must satisfy 0 < low < high");
  require(high < rec.sfreq / 2.0, "band outside Nyquist range");
  require(rec.samples.allFinite(), "recording contains NaN/Inf");

  const auto taps = design_bandpass_taps(rec.sfreq, low, high, n_taps);
  const Eigen::Index n = rec.n_samples();
  const std::size_t m = static_cast<std::size_t>(n) + taps.size() + 1;

  // |H|^2 over a buffer long enough that circular wraparound never reaches
  // the signal support: zero phase, equivalent to forward-backward filtering.
  std::vector<std::complex<double>> hspec(m, {0.0, 0.0});
  for (std::size_t i = 0; i < taps.size(); ++i) hspec[i] = {taps[i], 0.0};
  fftutil::fft(hspec, false);
  std::vector<double> gain(m);
  for (std::size_t i = 0; i < m; ++i) gain[i] = std::norm(hspec[i]);

  Recording out = rec;
  out.band_low = low;
  out.band_high = high;
  parallel_for(rec.n_channels(), [&](std::int64_t c) {
    std::vector<std::complex<double>> buf(m, {0.0, 0.0});
    for (Eigen::Index t = 0; t < n; ++t) buf[static_cast<std::size_t>(t)] = {rec.samples(c, t), 0.0};
    fftutil::fft(buf, false);
    for (std::size_t i = 0; i < m; ++i) buf[i] *= gain[i];
    fftutil::fft(buf, true);
    for (Eigen::Index t = 0; t < n; ++t) out.samples(c, t) = buf[static_cast<std::size_t>(t)].real();
  });
  return out;
}

PhaseSeries analytic_phase(const Recording& rec) {
  const Eigen::Index n = rec.n_samples();
  require(n >= 16, "analytic_phase: need at least 16 samples");
  require(rec.samples.allFinite(), "recording contains NaN/Inf");

  PhaseSeries ps;
  ps.phases.resize(rec.n_channels(), n);
  ps.sfreq = rec.sfreq;
  ps.band_low = rec.band_low;
  ps.band_high = rec.band_high;
  ps.subject_id = rec.subject_id;
  ps.run_id = rec.run_id;

  const std::size_t un = static_cast<std::size_t>(n);
  parallel_for(rec.n_channels(), [&](std::int64_t c) {
    std::vector<std::complex<double>> buf(un);
    for (std::size_t t = 0; t < un; ++t) buf[t] = {rec.samples(c, static_cast<Eigen::Index>(t)), 0.0};
    fftutil::fft(buf, false);
    // Analytic signal: keep DC (and Nyquist for even n), double positive
    // frequencies, zero negative frequencies.
    const std::size_t half = un / 2;
    for (std::size_t k = 1; k < half + (un % 2); ++k) buf[k] *= 2.0;
    for (std::size_t k = half + 1; k < un; ++k) buf[k] = {0.0, 0.0};
    fftutil::fft(buf, true);
    for (std::size_t t = 0; t < un; ++t)
      ps.phases(c, static_cast<Eigen::Index>(t)) = std::atan2(buf[t].imag(), buf[t].real());
  });
  return ps;
}

EdgeSeries connectivity_windows(const PhaseSeries& phase, const WindowSpec& win, ConnMethod method,
                                double edge_trim_s) {
  require(win.step_s > 0.0 && win.step_s <= win.length_s, "window: 0 < step <= length");
  require(edge_trim_s >= 0.0, "window: edge trim must be nonnegative");
  const Eigen::Index n_ch = phase.phases.rows();
  const Eigen::Index n_samples = phase.phases.cols();
  const double sfreq = phase.sfreq;
  const Eigen::Index win_len = static_cast<Eigen::Index>(std::lround(win.length_s * sfreq));
  const Eigen::Index trim = static_cast<Eigen::Index>(std::lround(edge_trim_s * sfreq));
  require(win_len >= 2, "window shorter than 2 samples");
  require(n_samples >= 2 * win_len, "recording shorter than 2 windows");
  require(trim + win_len + trim <= n_samples, "window does not fit after edge trim");

  std::vector<double> times;
  for (std::int64_t k = 0;; ++k) {
    const double t = edge_trim_s + static_cast<double>(k) * win.step_s;
    const Eigen::Index start = static_cast<Eigen::Index>(std::lround(t * sfreq));
    if (start + win_len > n_samples - trim) break;
    times.push_back(t);
  }
  require(!times.empty(), "no windows fit within the recording");

  const Eigen::Index n_edges = edge_count(n_ch);
  EdgeSeries out;
  out.window_times = times;
  out.edges.resize(static_cast<Eigen::Index>(times.size()), n_edges);
  out.method = method;
  out.n_channels = n_ch;
  out.subject_id = phase.subject_id;
  out.run_id = phase.run_id;

  // cos/sin per sample once; each pair then needs only products.
  Eigen::MatrixXd cs(n_ch, n_samples), sn(n_ch, n_samples);
  for (Eigen::Index c = 0; c < n_ch; ++c)
    for (Eigen::Index t = 0; t < n_samples; ++t) {
      cs(c, t) = std::cos(phase.phases(c, t));
      sn(c, t) = std::sin(phase.phases(c, t));
    }

  parallel_for(static_cast<std::int64_t>(times.size()), [&](std::int64_t w) {
    const Eigen::Index start = static_cast<Eigen::Index>(std::lround(times[static_cast<std::size_t>(w)] * sfreq));
    for (Eigen::Index i = 0; i < n_ch; ++i) {
      for (Eigen::Index j = i + 1; j < n_ch; ++j) {
        double sum_cos = 0.0, sum_sin = 0.0, sum_abs = 0.0;
        for (Eigen::Index t = start; t < start + win_len; ++t) {
          const double dc = cs(i, t) * cs(j, t) + sn(i, t) * sn(j, t);
          const double ds = sn(i, t) * cs(j, t) - cs(i, t) * sn(j, t);
          sum_cos += dc;
          sum_sin += ds;
          sum_abs += std::abs(ds);
        }
        const double inv = 1.0 / static_cast<double>(win_len);
        double value;
        if (method == ConnMethod::plv) {
          value = std::sqrt(sum_cos * inv * sum_cos * inv + sum_sin * inv * sum_sin * inv);
        } else {
          const double denom = sum_abs * inv;
          value = (denom < 1e-12) ? 0.0 : std::abs(sum_sin * inv) / denom;
        }
        out.edges(w, edge_index(i, j, n_ch)) = value;
      }
    }
  });
  return out;
}

std::vector<ConnectivityStateSequence> edge_pca(const std::vector<EdgeSeries>& edge_seqs,
                                                Eigen::Index k,
                                                const std::optional<PcaBasis>& fitted) {
  require(!edge_seqs.empty(), "edge_pca: no input sequences");
  const Eigen::Index n_edges = edge_seqs.front().edges.cols();
  Eigen::Index total = 0;
  for (const auto& s : edge_seqs) {
    require(s.edges.cols() == n_edges, "edge_pca: edge dimension mismatch");
    total += s.edges.rows();
  }

  PcaBasis basis;
  if (fitted.has_value()) {
    basis = *fitted;
    require(basis.components.cols() == n_edges, "edge_pca: fitted basis dimension mismatch");
  } else {
    require(k >= 1, "edge_pca: k must be positive");
    if (total < k) throw_invalid("edge_pca: fewer pooled windows than components");
    Eigen::MatrixXd pooled(total, n_edges);
    Eigen::Index row = 0;
    for (const auto& s : edge_seqs) {
      pooled.middleRows(row, s.edges.rows()) = s.edges;
      row += s.edges.rows();
    }
    basis.mean = pooled.colwise().mean().transpose();
    Eigen::MatrixXd centered = pooled.rowwise() - basis.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::Index kk = std::min<Eigen::Index>(k, svd.singularValues().size());
    require(kk == k, "edge_pca: rank smaller than requested k");
    basis.components = svd.matrixV().leftCols(k).transpose();
    basis.explained_variance.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double s = svd.singularValues()(i);
      basis.explained_variance(i) = s * s / static_cast<double>(std::max<Eigen::Index>(1, total - 1));
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      Eigen::Index arg = 0;
      basis.components.row(i).cwiseAbs().maxCoeff(&arg);
      if (basis.components(i, arg) < 0.0) basis.components.row(i) *= -1.0;
    }
  }

  std::vector<ConnectivityStateSequence> out;
  out.reserve(edge_seqs.size());
  for (const auto& s : edge_seqs) {
    ConnectivityStateSequence seq;
    seq.window_times = s.window_times;
    seq.states = (s.edges.rowwise() - basis.mean.transpose()) * basis.components.transpose();
    seq.method = s.method;
    seq.basis = basis;
    seq.subject_id = s.subject_id;
    seq.run_id = s.run_id;
    out.push_back(std::move(seq));
  }
  return out;
}

void save_recording(const std::string& path, const Recording& rec) {
  TensorArchive a;
  a.add("samples", rec.samples);
  a.meta()["sfreq"] = std::to_string(rec.sfreq);
  a.meta()["subject_id"] = rec.subject_id;
  a.meta()["run_id"] = rec.run_id;
  std::string names;
  for (std::size_t i = 0; i < rec.channel_names.size(); ++i) {
    if (i) names += ',';
    names += rec.channel_names[i];
  }
  a.meta()["channel_names"] = names;
  a.save(path);
}

Recording load_recording(const std::string& path) {
  TensorArchive a = TensorArchive::load(path);
  Recording rec;
  rec.samples = a.matrix("samples");
  rec.sfreq = std::stod(a.meta().at("sfreq"));
  rec.subject_id = a.meta().at("subject_id");
  rec.run_id = a.meta().at("run_id");
  std::string names = a.meta().at("channel_names");
  std::size_t pos = 0;
  while (pos <= names.size() && !names.empty()) {
    const std::size_t comma = names.find(',', pos);
    rec.channel_names.push_back(names.substr(pos, comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return rec;
}

void save_state_sequence(const std::string& path_prefix, const ConnectivityStateSequence& seq,
                         const WindowSpec& win, std::pair<double, double> band) {
  TensorArchive a;
  a.add("states", seq.states);
  a.add("pca_basis", seq.basis.components);
  a.add("pca_mean", seq.basis.mean);
  a.add("explained_variance", seq.basis.explained_variance);
  a.add("window_times", seq.window_times);
  a.meta()["method"] = to_string(seq.method);
  a.meta()["subject_id"] = seq.subject_id;
  a.meta()["run_id"] = seq.run_id;
  a.save(path_prefix + ".naxt");

  nlohmann::json manifest;
  manifest["method"] = to_string(seq.method);
  manifest["window"] = {{"length_s", win.length_s}, {"step_s", win.step_s}};
  manifest["band"] = {{"low_hz", band.first}, {"high_hz", band.second}};
  manifest["state_dim"] = seq.states.cols();
  std::vector<double> ev(seq.basis.explained_variance.data(),
                         seq.basis.explained_variance.data() + seq.basis.explained_variance.size());
  manifest["explained_variance"] = ev;
  std::ofstream f(path_prefix + ".json", std::ios::trunc);
  if (!f) throw_io("cannot write manifest: " + path_prefix + ".json");
  f << manifest.dump(2) << "\n";
}

ConnectivityStateSequence load_state_sequence(const std::string& path_prefix) {
  TensorArchive a = TensorArchive::load(path_prefix + ".naxt");
  ConnectivityStateSequence seq;
  seq.states = a.matrix("states");
  seq.basis.components = a.matrix("pca_basis");
  seq.basis.mean = a.vector("pca_mean");
  seq.basis.explained_variance = a.vector("explained_variance");
  const Eigen::VectorXd wt = a.vector("window_times");
  seq.window_times.assign(wt.data(), wt.data() + wt.size());
  seq.method = conn_method_from_string(a.meta().at("method"));
  seq.subject_id = a.meta().at("subject_id");
  seq.run_id = a.meta().at("run_id");
  return seq;
}

}  // namespace neuraxis::signal
