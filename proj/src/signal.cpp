#include "rvae/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "rvae/errors.hpp"

namespace rvae {

namespace {

// Below this summed squared window the synthesis gain is clamped instead of
// inverted (only the first and last few samples of a signal are affected).
constexpr double kSynthesisFloor = 1e-2;

}  // namespace

std::vector<double> sine_window(std::size_t size) {
  if (size == 0 || size % 4 != 0)
    throw ConfigError("sine window size must be a positive multiple of 4 (75% overlap), got " +
                      std::to_string(size));
  std::vector<double> w(size);
  for (std::size_t k = 0; k < size; ++k) w[k] = std::sin(std::numbers::pi * (double(k) + 0.5) / double(size));
  return w;
}

std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (length == 0) return 0;
  if (length <= window) return 1;
  return (length - window + hop - 1) / hop + 1;
}

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!std::has_single_bit(n)) throw ConfigError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  std::vector<std::complex<double>> twiddle(n / 2);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n / 2; ++k)
    twiddle[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * double(k) / double(n));
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + half] * twiddle[k * stride];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x, bool inverse) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, sign * 2.0 * std::numbers::pi * double((k * t) % n) / double(n));
    out[k] = inverse ? acc / double(n) : acc;
  }
  return out;
}

ComplexSpectrogram stft(const Waveform& wave, std::size_t window_size) {
  if (wave.samples.empty()) throw ContractError("stft: empty waveform");
  if (!std::has_single_bit(window_size)) throw ConfigError("stft: window size must be a power of two");
  const auto window = sine_window(window_size);
  const std::size_t hop = window_size / 4;
  const std::size_t frames = frame_count(wave.size(), window_size, hop);
  const std::size_t freqs = window_size / 2 + 1;

  ComplexSpectrogram spec;
  spec.window_size = window_size;
  spec.hop = hop;
  spec.bins.resize(Eigen::Index(freqs), Eigen::Index(frames));
  std::vector<std::complex<double>> buf(window_size);
  for (std::size_t n = 0; n < frames; ++n) {
    const std::size_t start = n * hop;
    for (std::size_t k = 0; k < window_size; ++k) {
      const std::size_t i = start + k;
      buf[k] = i < wave.size() ? wave.samples[i] * window[k] : 0.0;
    }
    fft_inplace(buf);
    for (std::size_t f = 0; f < freqs; ++f) spec.bins(Eigen::Index(f), Eigen::Index(n)) = buf[f];
  }
  return spec;
}

Waveform istft(const ComplexSpectrogram& spec, std::size_t length, int sample_rate) {
  const std::size_t window_size = spec.window_size;
  if (spec.hop * 4 != window_size || spec.freqs() != window_size / 2 + 1)
    throw ConfigError("istft: spectrogram geometry (F=" + std::to_string(spec.freqs()) + ", hop=" +
                      std::to_string(spec.hop) + ") does not match a " + std::to_string(window_size) +
                      "-sample window with 75% overlap");
  const auto window = sine_window(window_size);
  const std::size_t frames = spec.frames();
  const std::size_t span = frames == 0 ? 0 : (frames - 1) * spec.hop + window_size;
  std::vector<double> acc(std::max(span, length), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  std::vector<std::complex<double>> buf(window_size);
  const std::size_t freqs = spec.freqs();
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t f = 0; f < freqs; ++f) buf[f] = spec.bins(Eigen::Index(f), Eigen::Index(n));
    for (std::size_t f = freqs; f < window_size; ++f) buf[f] = std::conj(buf[window_size - f]);
    fft_inplace(buf, true);
    const std::size_t start = n * spec.hop;
    for (std::size_t k = 0; k < window_size; ++k) {
      acc[start + k] += window[k] * buf[k].real();
      norm[start + k] += window[k] * window[k];
    }
  }
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i) out.samples[i] = acc[i] / std::max(norm[i], kSynthesisFloor);
  return out;
}

}  // namespace rvae
