#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rvae/signal.hpp"

namespace rvae {

struct MixSpec {
  Waveform clean;
  Waveform noise;  // at least as long as clean; a random segment is used
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct Mixture {
  Waveform mixture;
  Waveform scaled_clean;
  Waveform scaled_noise;
  std::size_t noise_offset = 0;
};

/// Scales the noise so that 10 log10(|s|^2 / |b|^2) = snr_db. If the sum would
/// clip (peak above `peak_limit`), both components are scaled by one common
/// factor, which leaves the SNR unchanged. mixture[i] = clean[i] + noise[i].
Mixture mix_at_snr(const MixSpec& spec, double peak_limit = 0.99);

inline constexpr double kSiSdrCap = 100.0;

/// SI-SDR in dB, clamped to [-100, 100]. A zero-energy estimate gives -100.
double si_sdr(std::span<const double> reference, std::span<const double> estimate);
double si_sdr(const Waveform& reference, const Waveform& estimate);

/// Drops `margin` samples at both ends (the iSTFT edge region). Signals too
/// short to trim are returned unchanged.
Waveform trim_edges(const Waveform& w, std::size_t margin = kWindowSize - kWindowSize / 4);

struct Summary {
  double median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t count = 0;
};

inline constexpr std::size_t kBootstrapResamples = 10000;
inline constexpr std::uint64_t kBootstrapSeed = 0x5eed;

/// Median and percentile bootstrap 95% confidence interval of the median.
Summary summarize(std::span<const double> scores, std::size_t resamples = kBootstrapResamples,
                  std::uint64_t seed = kBootstrapSeed);

double median(std::vector<double> values);

}  // namespace rvae
