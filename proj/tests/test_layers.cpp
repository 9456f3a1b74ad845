#include <doctest.h>

#include <cmath>
#include <random>

#include "rvae/adam.hpp"
#include "rvae/layers.hpp"

using namespace rvae;

namespace {

Tensor uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double a = 1.0) {
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop LSTM, gate order (i, f, g, o); returns N x B x H.
Tensor reference_lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& b, bool reverse) {
  const std::size_t N = x.shape()[0], B = x.shape()[1], D = x.shape()[2], H = w_hh.rows();
  Tensor out({N, B, H});
  for (std::size_t bb = 0; bb < B; ++bb) {
    std::vector<double> h(H, 0.0), c(H, 0.0);
    for (std::size_t step = 0; step < N; ++step) {
      const std::size_t n = reverse ? N - 1 - step : step;
      std::vector<double> gates(4 * H);
      for (std::size_t j = 0; j < 4 * H; ++j) {
        double acc = b[j];
        for (std::size_t d = 0; d < D; ++d) acc += x[(n * B + bb) * D + d] * w_ih(d, j);
        for (std::size_t k = 0; k < H; ++k) acc += h[k] * w_hh(k, j);
        gates[j] = acc;
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double i = sigm(gates[k]), f = sigm(gates[H + k]), g = std::tanh(gates[2 * H + k]),
                     o = sigm(gates[3 * H + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * std::tanh(c[k]);
        out[(n * B + bb) * H + k] = h[k];
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("dense layer matches x W + b") {
  std::mt19937_64 rng(1);
  const Tensor x = uniform({3, 4}, rng), w = uniform({4, 2}, rng), b = uniform({1, 2}, rng);
  const Tensor y = forward_dense(x, w, b);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < 4; ++k) acc += x(r, k) * w(k, c);
      CHECK(y(r, c) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("LSTM matches a scalar reference in both directions") {
  std::mt19937_64 rng(2);
  ParamSet p;
  init_lstm(p, "l", 3, 5, rng);
  p["l.b"] = uniform({1, 20}, rng);
  const Tensor x = uniform({6, 2, 3}, rng, 2.0);
  for (auto dir : {Direction::forward, Direction::backward}) {
    const Tensor got = forward_lstm(x, p["l.W_ih"], p["l.W_hh"], p["l.b"], dir);
    const Tensor want = reference_lstm(x, p["l.W_ih"], p["l.W_hh"], p["l.b"], dir == Direction::backward);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
}

TEST_CASE("masked tail frames do not reach valid frames") {
  std::mt19937_64 rng(3);
  ParamSet p;
  init_lstm(p, "l", 2, 3, rng);
  const std::size_t N = 5, valid = 3;
  Tensor x = uniform({N, 2}, rng);
  Tensor short_x = Tensor::matrix(valid, 2);
  for (std::size_t i = 0; i < valid * 2; ++i) short_x[i] = x[i];
  Tensor mask = Tensor::matrix(N, 1, 0.0);
  for (std::size_t n = 0; n < valid; ++n) mask[n] = 1.0;

  for (auto dir : {Direction::forward, Direction::backward}) {
    ad::Tape tape;
    const Bindings b(tape, p, false);
    const auto w = LstmWeights::bind(b, "l");
    const auto full = layers::lstm(tape.constant(x), 1, w, dir, &mask);
    const auto ref = layers::lstm(tape.constant(short_x), 1, w, dir);
    for (std::size_t n = 0; n < valid; ++n)
      for (std::size_t k = 0; k < 3; ++k) CHECK(full[n].value()[k] == ref[n].value()[k]);
  }
}

TEST_CASE("initialisers") {
  std::mt19937_64 rng(4);
  ParamSet p;
  init_dense(p, "d", 30, 20, rng);
  init_lstm(p, "l", 7, 4, rng);
  const double glorot = std::sqrt(6.0 / 50.0);
  for (double v : p["d.W"].values()) CHECK(std::abs(v) <= glorot);
  for (double v : p["d.b"].values()) CHECK(v == 0.0);
  for (std::size_t j = 0; j < 16; ++j) CHECK(p["l.b"][j] == (j >= 4 && j < 8 ? 1.0 : 0.0));
  for (double v : p["l.W_hh"].values()) CHECK(std::abs(v) <= 0.5);
}

TEST_CASE("global norm clipping") {
  ParamSet g{{"a", Tensor::from_rows({{3.0, 0.0}})}, {"b", Tensor::from_rows({{4.0}})}};
  CHECK(global_norm(g) == doctest::Approx(5.0));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(5.0));
  CHECK(g["a"][0] == 3.0);
  clip_global_norm(g, 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(g["a"][0] == doctest::Approx(0.6));
}

TEST_CASE("Adam follows the bias-corrected update") {
  AdamState adam(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  ParamSet p{{"w", Tensor::from_rows({{1.0, -2.0}})}};
  const ParamSet g1{{"w", Tensor::from_rows({{0.5, -3.0}})}};
  const ParamSet g2{{"w", Tensor::from_rows({{-1.0, 2.0}})}};
  adam.minimize(p, g1);
  // first step moves each coordinate by ~alpha against the gradient sign
  CHECK(p["w"][0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p["w"][1] == doctest::Approx(-1.9).epsilon(1e-7));
  const Tensor p1 = p["w"];
  adam.minimize(p, g2);
  double expect[2];
  for (int i = 0; i < 2; ++i) {
    const double a = g1.at("w")[i], b = g2.at("w")[i];
    const double m = 0.9 * 0.1 * a + 0.1 * b, v = 0.999 * 0.001 * a * a + 0.001 * b * b;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    expect[i] = p1[std::size_t(i)] - 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(p["w"][0] == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(p["w"][1] == doctest::Approx(expect[1]).epsilon(1e-12));
  CHECK(adam.steps() == 2);

  AdamState up(AdamConfig{0.1});
  ParamSet q{{"w", Tensor::scalar(0.0)}};
  up.maximize(q, ParamSet{{"w", Tensor::scalar(2.0)}});
  CHECK(q["w"][0] == doctest::Approx(0.1).epsilon(1e-7));
}

}  // TEST_SUITE
