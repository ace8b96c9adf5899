#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace neuraxis::signal {

struct Recording {
  Eigen::MatrixXd samples;  // (n_channels x n_samples)
  double sfreq = 0.0;
  std::vector<std::string> channel_names;
  std::string subject_id;
  std::string run_id;
  // Set by bandpass_filter; 0/0 while broadband.
  double band_low = 0.0;
  double band_high = 0.0;

  Eigen::Index n_channels() const { return samples.rows(); }
  Eigen::Index n_samples() const { return samples.cols(); }
  double duration_s() const { return static_cast<double>(n_samples()) / sfreq; }
};

struct PhaseSeries {
  Eigen::MatrixXd phases;  // (n_channels x n_samples), radians in (-pi, pi]
  double sfreq = 0.0;
  double band_low = 0.0;
  double band_high = 0.0;
  std::string subject_id;
  std::string run_id;
};

struct WindowSpec {
  double length_s = 2.0;
  double step_s = 0.5;
};

enum class ConnMethod { plv, wpli };

std::string to_string(ConnMethod m);
ConnMethod conn_method_from_string(const std::string& s);

// Per-window connectivity over all channel pairs, lexicographic (i, j), i<j.
struct EdgeSeries {
  std::vector<double> window_times;  // window start, seconds
  Eigen::MatrixXd edges;             // (n_windows x n_edges)
  ConnMethod method = ConnMethod::plv;
  Eigen::Index n_channels = 0;
  std::string subject_id;
  std::string run_id;
};

struct PcaBasis {
  Eigen::MatrixXd components;         // (state_dim x n_edges), orthonormal rows
  Eigen::VectorXd mean;               // (n_edges)
  Eigen::VectorXd explained_variance; // (state_dim)
};

struct ConnectivityStateSequence {
  std::vector<double> window_times;
  Eigen::MatrixXd states;  // (n_windows x state_dim)
  ConnMethod method = ConnMethod::plv;
  PcaBasis basis;
  std::string subject_id;
  std::string run_id;
};

inline Eigen::Index edge_count(Eigen::Index n_channels) {
  return n_channels * (n_channels - 1) / 2;
}
inline Eigen::Index edge_index(Eigen::Index i, Eigen::Index j, Eigen::Index n_channels) {
  return i * n_channels - i * (i + 1) / 2 + (j - i - 1);
}

// Zero-phase FIR band-pass (forward-backward). Tap count defaults to
// 6 * sfreq / low rounded up to odd, the smallest multiple that meets the
// response contract (>= 40 dB at 0.5 * low, < 1 dB passband droop two-pass);
// pass 0 to use the default.
Recording bandpass_filter(const Recording& rec, std::pair<double, double> band, int n_taps = 0);

// The taps used by bandpass_filter; exposed for response checks.
std::vector<double> design_bandpass_taps(double sfreq, double low, double high, int n_taps = 0);

// Frequency-domain Hilbert transform; phase of the analytic signal.
PhaseSeries analytic_phase(const Recording& rec);

// PLV or wPLI over sliding windows. The first and last edge_trim_s seconds
// are excluded from window placement (filter/Hilbert edge artifacts).
EdgeSeries connectivity_windows(const PhaseSeries& phase, const WindowSpec& win, ConnMethod method,
                                double edge_trim_s = 1.0);

// Fits PCA on the pooled windows of all sequences (or reuses fitted) and
// transforms each. Components ordered by decreasing explained variance;
// sign fixed so each component's largest-|loading| entry is positive.
std::vector<ConnectivityStateSequence> edge_pca(const std::vector<EdgeSeries>& edge_seqs,
                                                Eigen::Index k,
                                                const std::optional<PcaBasis>& fitted = {});

void save_recording(const std::string& path, const Recording& rec);
Recording load_recording(const std::string& path);

// Writes <path>.naxt (binary float32 tensors) and <path>.json (manifest).
void save_state_sequence(const std::string& path_prefix, const ConnectivityStateSequence& seq,
                         const WindowSpec& win, std::pair<double, double> band);
ConnectivityStateSequence load_state_sequence(const std::string& path_prefix);

}  // namespace neuraxis::signal
