#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace rvae {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kWindowSize = 1024;  // 64 ms at 16 kHz -> F = 513

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_seconds() const noexcept { return double(samples.size()) / sample_rate; }
};

/// F x N complex STFT; column n is frame n, covering samples [n*hop, n*hop + window).
struct ComplexSpectrogram {
  Eigen::MatrixXcd bins;
  std::size_t window_size = kWindowSize;
  std::size_t hop = kWindowSize / 4;

  std::size_t freqs() const noexcept { return std::size_t(bins.rows()); }
  std::size_t frames() const noexcept { return std::size_t(bins.cols()); }
  /// |X|^2, F x N.
  Eigen::MatrixXd power() const { return bins.cwiseAbs2(); }
};

/// w[k] = sin(pi (k + 0.5) / size). Size must be a positive multiple of 4.
std::vector<double> sine_window(std::size_t size);

/// Number of frames for `length` samples with tail zero-padding:
/// ceil((length - window) / hop) + 1, and 1 for 0 < length <= window.
std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop);

ComplexSpectrogram stft(const Waveform& wave, std::size_t window_size = kWindowSize);

/// Weighted overlap-add with the sine synthesis window, normalised by the
/// summed squared window. Output is trimmed (or zero-extended) to `length`.
Waveform istft(const ComplexSpectrogram& spec, std::size_t length, int sample_rate = kSampleRate);

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data, bool inverse = false);
/// O(n^2) reference DFT.
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& data, bool inverse = false);

enum class WavFormat { pcm16, float32 };

/// Reads a mono 16-bit PCM or 32-bit float RIFF/WAVE file. No resampling is
/// performed: a rate different from `expected_rate` is an IoError.
Waveform read_wav(const std::filesystem::path& path, int expected_rate = kSampleRate);
void write_wav(const std::filesystem::path& path, const Waveform& wave, WavFormat format = WavFormat::float32);

}  // namespace rvae
