#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>

#include "rvae/errors.hpp"
#include "rvae/signal.hpp"
#include "test_util.hpp"

using namespace rvae;
using rvae::testing::TempDir;

namespace {

Waveform noise(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Waveform w;
  w.samples.resize(n);
  for (double& x : w.samples) x = g(rng);
  return w;
}

}  // namespace

TEST_SUITE("signal") {

TEST_CASE("sine window values and COLA constant") {
  const auto w = sine_window(1024);
  REQUIRE(w.size() == 1024);
  for (std::size_t k = 0; k < w.size(); k += 97)
    CHECK(w[k] == doctest::Approx(std::sin(std::numbers::pi * (double(k) + 0.5) / 1024.0)).epsilon(1e-15));
  // sum of squared windows at hop 256
  for (std::size_t t = 0; t < 256; ++t) {
    double s = 0.0;
    for (std::size_t k = t; k < 1024; k += 256) s += w[k] * w[k];
    CHECK(std::abs(s - 2.0) < 1e-10);
  }
  CHECK_THROWS_AS(sine_window(1022), ConfigError);
}

TEST_CASE("frame count with tail padding") {
  CHECK(frame_count(1, 1024, 256) == 1);
  CHECK(frame_count(1024, 1024, 256) == 1);
  CHECK(frame_count(1025, 1024, 256) == 2);
  CHECK(frame_count(1280, 1024, 256) == 2);
  CHECK(frame_count(1281, 1024, 256) == 3);
  CHECK(frame_count(16000, 1024, 256) == 60);
}

TEST_CASE("FFT agrees with the direct DFT") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (std::size_t n : {1u, 2u, 8u, 64u, 1024u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {g(rng), g(rng)};
    for (bool inverse : {false, true}) {
      auto fast = x;
      fft_inplace(fast, inverse);
      const auto slow = dft(x, inverse);
      double err = 0.0, ref = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        err += std::norm(fast[i] - slow[i]);
        ref += std::norm(slow[i]);
      }
      CHECK(std::sqrt(err / ref) < 1e-12);
    }
  }
  std::vector<std::complex<double>> bad(6);
  CHECK_THROWS_AS(fft_inplace(bad), ConfigError);
}

TEST_CASE("STFT columns are DFTs of windowed frames") {
  const Waveform x = noise(3000, 7);
  const auto spec = stft(x);
  CHECK(spec.freqs() == 513);
  CHECK(spec.frames() == frame_count(3000, 1024, 256));
  const auto w = sine_window(1024);
  for (std::size_t n : {std::size_t(0), std::size_t(3), spec.frames() - 1}) {
    for (std::size_t f : {0u, 1u, 100u, 512u}) {
      std::complex<double> acc = 0.0;
      for (std::size_t k = 0; k < 1024; ++k) {
        const std::size_t i = n * 256 + k;
        const double v = i < x.size() ? x.samples[i] : 0.0;
        acc += v * w[k] * std::polar(1.0, -2.0 * std::numbers::pi * double(f * k) / 1024.0);
      }
      CHECK(std::abs(spec.bins(Eigen::Index(f), Eigen::Index(n)) - acc) < 1e-9);
    }
  }
}

TEST_CASE("round trip on the interior") {
  for (std::size_t len : {1024u, 5000u, 16000u, 33333u}) {
    const Waveform x = noise(len, len);
    const Waveform y = istft(stft(x), x.size());
    REQUIRE(y.size() == x.size());
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 768; i + 768 < len; ++i) {
      err += (y.samples[i] - x.samples[i]) * (y.samples[i] - x.samples[i]);
      ref += x.samples[i] * x.samples[i];
    }
    if (ref > 0) CHECK(std::sqrt(err / ref) < 1e-6);
  }
}

TEST_CASE("empty input is rejected") {
  CHECK_THROWS_AS(stft(Waveform{}), ContractError);
}

TEST_CASE("WAV round trips") {
  TempDir dir("wav");
  Waveform x = noise(1000, 9, 0.2);
  write_wav(dir / "f.wav", x, WavFormat::float32);
  const Waveform f = read_wav(dir / "f.wav");
  REQUIRE(f.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(f.samples[i] == double(float(x.samples[i])));

  write_wav(dir / "p.wav", x, WavFormat::pcm16);
  const Waveform p = read_wav(dir / "p.wav");
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(p.samples[i] - x.samples[i]) <= 0.5 / 32768.0 + 1e-12);

  Waveform loud;
  loud.samples = {1.5, -1.5, 0.5};
  write_wav(dir / "clip.wav", loud, WavFormat::pcm16);
  const Waveform c = read_wav(dir / "clip.wav");
  CHECK(c.samples[0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(c.samples[1] == -1.0);
  CHECK(c.samples[2] == 0.5);
}

TEST_CASE("WAV errors") {
  TempDir dir("wav");
  Waveform x = noise(100, 1);
  x.sample_rate = 8000;
  write_wav(dir / "8k.wav", x);
  CHECK_THROWS_AS(read_wav(dir / "8k.wav"), IoError);
  CHECK(read_wav(dir / "8k.wav", 8000).sample_rate == 8000);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
  {
    std::ofstream junk(dir / "junk.wav", std::ios::binary);
    junk << "RIFF\x04\x00\x00\x00WAVX";
  }
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), IoError);

  // stereo header
  write_wav(dir / "s.wav", noise(10, 2));
  std::string bytes = rvae::testing::read_file(dir / "s.wav");
  bytes[22] = 2;
  {
    std::ofstream out(dir / "s.wav", std::ios::binary);
    out << bytes;
  }
  CHECK_THROWS_WITH_AS(read_wav(dir / "s.wav"), doctest::Contains("mono"), IoError);
}

}  // TEST_SUITE
