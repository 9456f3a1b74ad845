#include <doctest.h>

#include <cmath>
#include <random>

#include "rvae/errors.hpp"
#include "rvae/eval.hpp"

using namespace rvae;

namespace {

Waveform gaussian(std::size_t n, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Waveform w;
  w.samples.resize(n);
  for (double& x : w.samples) x = g(rng);
  return w;
}

double energy(const Waveform& w) {
  double e = 0.0;
  for (double x : w.samples) e += x * x;
  return e;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("mixing at a target SNR") {
  const Waveform s = gaussian(4000, 1), b = gaussian(6000, 2, 0.5);
  for (double snr : {-5.0, 0.0, 5.0, 10.0}) {
    const Mixture m = mix_at_snr({s, b, snr, 7});
    CHECK(10.0 * std::log10(energy(m.scaled_clean) / energy(m.scaled_noise)) == doctest::Approx(snr).epsilon(1e-12));
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(m.mixture.samples[i] == m.scaled_clean.samples[i] + m.scaled_noise.samples[i]);
  }
  const Mixture zero = mix_at_snr({s, b, 0.0, 7});
  CHECK(std::abs(energy(zero.scaled_clean) / energy(zero.scaled_noise) - 1.0) < 1e-10);
  const Mixture ten = mix_at_snr({s, b, 10.0, 7});
  CHECK(energy(ten.scaled_noise) == doctest::Approx(energy(ten.scaled_clean) / 10.0).epsilon(1e-12));
}

TEST_CASE("mixing is deterministic and crops the noise") {
  const Waveform s = gaussian(1000, 3), b = gaussian(5000, 4);
  const Mixture a = mix_at_snr({s, b, 0.0, 11}), c = mix_at_snr({s, b, 0.0, 11});
  CHECK(a.mixture.samples == c.mixture.samples);
  CHECK(a.noise_offset + s.size() <= b.size());
  bool any_other = false;
  for (std::uint64_t seed = 0; seed < 10; ++seed) any_other |= mix_at_snr({s, b, 0.0, seed}).noise_offset != a.noise_offset;
  CHECK(any_other);
}

TEST_CASE("loud mixtures are scaled jointly") {
  const Waveform s = gaussian(3000, 5, 0.8), b = gaussian(3000, 6, 0.8);
  const Mixture m = mix_at_snr({s, b, -5.0, 1});
  double peak = 0.0;
  for (double x : m.mixture.samples) peak = std::max(peak, std::abs(x));
  CHECK(peak <= 0.99 + 1e-12);
  CHECK(10.0 * std::log10(energy(m.scaled_clean) / energy(m.scaled_noise)) == doctest::Approx(-5.0).epsilon(1e-12));
}

TEST_CASE("mixing errors") {
  const Waveform s = gaussian(100, 1);
  CHECK_THROWS_AS(mix_at_snr({s, gaussian(50, 2), 0.0, 1}), ContractError);
  CHECK_THROWS_AS(mix_at_snr({s, Waveform{std::vector<double>(200, 0.0)}, 0.0, 1}), ContractError);
  CHECK_THROWS_AS(mix_at_snr({Waveform{std::vector<double>(100, 0.0)}, gaussian(200, 2), 0.0, 1}), ContractError);
  Waveform other = gaussian(200, 3);
  other.sample_rate = 8000;
  CHECK_THROWS_AS(mix_at_snr({s, other, 0.0, 1}), ContractError);
}

TEST_CASE("SI-SDR reference values") {
  const Waveform s = gaussian(2000, 7);
  CHECK(si_sdr(s, s) == kSiSdrCap);
  Waveform scaled = s;
  for (double& x : scaled.samples) x *= 3.7;
  CHECK(si_sdr(s, scaled) == kSiSdrCap);

  // orthogonal noise of equal energy -> 0 dB
  Waveform n = gaussian(2000, 8);
  double dot = 0.0, es = energy(s);
  for (std::size_t i = 0; i < s.size(); ++i) dot += n.samples[i] * s.samples[i];
  for (std::size_t i = 0; i < s.size(); ++i) n.samples[i] -= dot / es * s.samples[i];
  const double k = std::sqrt(es / energy(n));
  Waveform est = s;
  for (std::size_t i = 0; i < s.size(); ++i) est.samples[i] += k * n.samples[i];
  CHECK(si_sdr(s, est) == doctest::Approx(0.0).epsilon(1e-9));

  CHECK(si_sdr(s, Waveform{std::vector<double>(2000, 0.0)}) == -kSiSdrCap);
  CHECK_THROWS_AS(si_sdr(Waveform{std::vector<double>(2000, 0.0)}, s), ContractError);
  CHECK_THROWS_AS(si_sdr(s, gaussian(10, 1)), DimensionError);
}

TEST_CASE("SI-SDR scale invariance") {
  const Waveform s = gaussian(1500, 9), noise = gaussian(1500, 10, 0.05);
  Waveform est = s;
  for (std::size_t i = 0; i < s.size(); ++i) est.samples[i] += noise.samples[i];
  const double base = si_sdr(s, est);
  for (double a : {0.01, 0.5, 2.0, 123.0}) {
    Waveform e = est, r = s;
    for (double& x : e.samples) x *= a;
    CHECK(si_sdr(s, e) == doctest::Approx(base).epsilon(1e-10));
    for (double& x : r.samples) x *= a;
    CHECK(si_sdr(r, e) == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("summaries") {
  const std::vector<double> five{1, 2, 3, 4, 5};
  CHECK(summarize(five).median == 3.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  const std::vector<double> constant(20, 1.5);
  const Summary c = summarize(constant);
  CHECK(c.ci_low == 1.5);
  CHECK(c.ci_high == 1.5);
  CHECK_THROWS_AS(summarize(std::vector<double>{}), ContractError);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  std::vector<double> normal(651);
  for (double& x : normal) x = g(rng);
  const Summary s = summarize(normal);
  CHECK(s.ci_low < s.median);
  CHECK(s.median < s.ci_high);
  CHECK(s.ci_high - s.ci_low > 0.1);
  CHECK(s.ci_high - s.ci_low < 0.25);
  const Summary again = summarize(normal);
  CHECK(again.ci_low == s.ci_low);
}

TEST_CASE("edge trimming") {
  const Waveform w = gaussian(5000, 1);
  const Waveform t = trim_edges(w);
  CHECK(t.size() == 5000 - 2 * 768);
  CHECK(t.samples.front() == w.samples[768]);
  CHECK(trim_edges(gaussian(1000, 1)).size() == 1000);
}

}  // TEST_SUITE
