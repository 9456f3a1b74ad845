#include "rvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rvae/errors.hpp"
#include "rvae/rng.hpp"

namespace rvae {

namespace {

double energy(std::span<const double> x) { return std::inner_product(x.begin(), x.end(), x.begin(), 0.0); }

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Mixture mix_at_snr(const MixSpec& spec, double peak_limit) {
  const auto& s = spec.clean.samples;
  const auto& b = spec.noise.samples;
  if (spec.clean.sample_rate != spec.noise.sample_rate)
    throw ContractError("mix_at_snr: clean and noise sample rates differ");
  if (b.size() < s.size()) throw ContractError("mix_at_snr: noise is shorter than the clean signal");
  if (s.empty()) throw ContractError("mix_at_snr: empty clean signal");
  if (!std::isfinite(spec.snr_db)) throw ContractError("mix_at_snr: SNR must be finite");

  auto rng = make_rng(spec.seed, "eval.mix.crop");
  const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, b.size() - s.size())(rng);
  const std::span<const double> segment(b.data() + offset, s.size());

  const double es = energy(s), eb = energy(segment);
  if (!(es > 0.0) || !(eb > 0.0)) throw ContractError("mix_at_snr: clean or noise has zero energy");
  double noise_gain = std::sqrt(es / (eb * std::pow(10.0, spec.snr_db / 10.0)));
  double clean_gain = 1.0;

  double peak = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) peak = std::max(peak, std::abs(s[i] + noise_gain * segment[i]));
  if (peak_limit > 0.0 && peak > peak_limit) {
    clean_gain = peak_limit / peak;
    noise_gain *= clean_gain;
  }

  Mixture m;
  m.noise_offset = offset;
  m.scaled_clean.sample_rate = m.scaled_noise.sample_rate = m.mixture.sample_rate = spec.clean.sample_rate;
  m.scaled_clean.samples.resize(s.size());
  m.scaled_noise.samples.resize(s.size());
  m.mixture.samples.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    m.scaled_clean.samples[i] = clean_gain * s[i];
    m.scaled_noise.samples[i] = noise_gain * segment[i];
    m.mixture.samples[i] = m.scaled_clean.samples[i] + m.scaled_noise.samples[i];
  }
  return m;
}

double si_sdr(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size())
    throw DimensionError("si_sdr: reference has " + std::to_string(reference.size()) + " samples, estimate " +
                         std::to_string(estimate.size()));
  const double ref_energy = energy(reference);
  if (!(ref_energy > 0.0)) throw ContractError("si_sdr: reference has zero energy");
  if (!(energy(estimate) > 0.0)) return -kSiSdrCap;

  const double alpha = std::inner_product(estimate.begin(), estimate.end(), reference.begin(), 0.0) / ref_energy;
  double target = 0.0, error = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    target += t * t;
    error += (t - estimate[i]) * (t - estimate[i]);
  }
  if (error == 0.0) return kSiSdrCap;
  if (target == 0.0) return -kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / error), -kSiSdrCap, kSiSdrCap);
}

double si_sdr(const Waveform& reference, const Waveform& estimate) {
  return si_sdr(std::span<const double>(reference.samples), std::span<const double>(estimate.samples));
}

Waveform trim_edges(const Waveform& w, std::size_t margin) {
  if (w.size() <= 2 * margin) return w;
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + std::ptrdiff_t(margin), w.samples.end() - std::ptrdiff_t(margin));
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + std::ptrdiff_t(mid));
  return 0.5 * (lower + upper);
}

Summary summarize(std::span<const double> scores, std::size_t resamples, std::uint64_t seed) {
  if (scores.empty()) throw ContractError("summarize: no scores");
  Summary out;
  out.count = scores.size();
  out.median = median({scores.begin(), scores.end()});

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
  std::vector<double> medians(resamples), draw(scores.size());
  for (auto& m : medians) {
    for (auto& d : draw) d = scores[pick(rng)];
    m = median(draw);
  }
  std::sort(medians.begin(), medians.end());
  out.ci_low = quantile_sorted(medians, 0.025);
  out.ci_high = quantile_sorted(medians, 0.975);
  return out;
}

}  // namespace rvae
