#pragma once

#include <complex>
#include <vector>

namespace neuraxis::fftutil {

// Thin FFTW wrappers. Plan creation is serialized internally (FFTW plan
// construction is not thread-safe); execution uses per-call buffers.
void fft(std::vector<std::complex<double>>& data, bool inverse);

// Complex spectrum of a real signal (full length).
std::vector<std::complex<double>> fft_real(const std::vector<double>& x);

}  // namespace neuraxis::fftutil
