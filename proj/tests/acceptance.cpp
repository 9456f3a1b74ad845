// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.
//
//   rvae_acceptance [--only 1,2,...] [--cli path/to/rvae] [--e2e-minutes M]
//                   [--e2e-hidden H] [--e2e-epochs E] [--e2e-count N]
//                   [--e2e-estep-steps S]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "rvae/autodiff.hpp"
#include "rvae/corpus.hpp"
#include "rvae/diagnostics.hpp"
#include "rvae/enhancer.hpp"
#include "rvae/eval.hpp"
#include "rvae/rng.hpp"
#include "rvae/signal.hpp"
#include "rvae/training.hpp"

using namespace rvae;
namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Args {
  std::set<int> only;
  std::string cli;
  double e2e_minutes = 20.0;
  std::size_t e2e_hidden = 64;
  std::size_t e2e_epochs = 200;
  std::size_t e2e_count = 20;
  std::size_t e2e_estep_steps = 5;
};

std::string num(double v, const char* f = "%.3g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double cpu_seconds() { return double(std::clock()) / CLOCKS_PER_SEC; }

MatrixXd lognormal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::exp(g(rng));
  return m;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("rvae-acceptance-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// ---- 1 ---------------------------------------------------------------------------------

Outcome gradient_suite_check() {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckOptions opts;
  opts.seeds = 20;
  const auto results = gradient_suite(opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = secs < 120.0 && !results.empty();
  double worst_layer = 0.0, worst_model = 0.0;
  std::string failed;
  for (const auto& r : results) {
    ok = ok && r.passed && r.cases >= 20;
    if (!r.passed) failed += " " + r.name;
    double& worst = r.tolerance <= 1e-4 ? worst_layer : worst_model;
    worst = std::max(worst, r.worst);
  }
  return {ok, std::to_string(results.size()) + " checks x 20 seeds, worst layer " + num(worst_layer) +
                  " (< 1e-4), worst model " + num(worst_model) + " (< 1e-3), " + num(secs, "%.1f") + " s" +
                  (failed.empty() ? "" : ", failed:" + failed)};
}

// ---- 2 ---------------------------------------------------------------------------------

Outcome vfe_decomposition_check() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto rng = make_rng(seed, "acceptance.vfe");
      std::uniform_int_distribution<std::size_t> pick(2, 9);
      const ModelDims dims{pick(rng), 3 + pick(rng), 2 + pick(rng)};
      const std::size_t N = 3 + pick(rng);
      const Model m = Model::init(v, dims, seed);
      MatrixXd p = lognormal(Eigen::Index(dims.freqs), Eigen::Index(N), rng, 1.5);
      const Tensor eps = standard_normal(N, dims.latent, rng);
      const FreeEnergySample s = free_energy_sample(p, m.decoder, m.encoder, eps);

      // (17): expected log-likelihood for the sampled z; (18): -KL of the
      // diagonal Gaussian posterior against N(0, I). Both written out here.
      double ll = 0.0, dropped = 0.0;
      for (Eigen::Index f = 0; f < p.rows(); ++f)
        for (Eigen::Index n = 0; n < p.cols(); ++n) {
          const double var = s.speech_var.values(f, n), pw = p(f, n);
          ll += -std::log(std::numbers::pi) - std::log(var) - pw / var;
          dropped += std::log(std::numbers::pi) + std::log(pw) + 1.0;
        }
      double kl = 0.0;
      for (std::size_t i = 0; i < s.posterior.mean.size(); ++i) {
        const double mu = s.posterior.mean[i], var = s.posterior.var[i];
        kl += 0.5 * (mu * mu + var - std::log(var) - 1.0);
      }
      const double expanded = ll + dropped - kl;
      worst = std::max(worst, std::abs(s.vfe - expanded) / std::max(1.0, std::abs(s.vfe)));
      ++cases;
    }
  }
  return {worst <= 1e-10, std::to_string(cases) + " instances, max |Eq12 - (Eq17+Eq18)| / max(1,|VFE|) = " + num(worst)};
}

// ---- 3 ---------------------------------------------------------------------------------

Outcome kl_monte_carlo_check() {
  constexpr std::size_t kInstances = 50, kSamples = 100000, L = 16;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < kInstances; ++i) {
    auto rng = make_rng(i, "acceptance.kl");
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(-3.0, 2.0);
    PosteriorParams q{Tensor::matrix(1, L), Tensor::matrix(1, L)};
    for (std::size_t l = 0; l < L; ++l) {
      q.mean[l] = 1.5 * g(rng);
      q.var[l] = std::exp(u(rng));
    }
    const double closed = kl_to_prior(q);
    // E_q[ln q(z) - ln p(z)] by sampling z ~ q
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t k = 0; k < kSamples; ++k) {
      double term = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = g(rng);
        const double z = q.mean[l] + std::sqrt(q.var[l]) * e;
        term += -0.5 * std::log(q.var[l]) - 0.5 * e * e + 0.5 * z * z;
      }
      sum += term;
      sum2 += term * term;
    }
    const double mean = sum / kSamples;
    const double se = std::sqrt((sum2 / kSamples - mean * mean) / double(kSamples - 1));
    worst_z = std::max(worst_z, std::abs(closed - mean) / se);
  }
  return {worst_z <= 3.0, "50 instances (L=16) x 1e5 samples, max |closed - MC| / SE = " + num(worst_z)};
}

// ---- 4 ---------------------------------------------------------------------------------

// s | z ~ N(A z + c, sigma^2 I), z ~ N(0, I), with orthogonal columns in A so
// the exact posterior is diagonal and representable by q.
Outcome lower_bound_check() {
  double worst_gap_err = 0.0, worst_exact_gap = 0.0, worst_bound = -1e300;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto rng = make_rng(seed, "acceptance.toy");
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.3, 3.0);
    const int L = 2 + int(seed % 4), D = L + 3 + int(seed % 3);
    MatrixXd R(D, L);
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = g(rng);
    const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(R).householderQ() * MatrixXd::Identity(D, L);
    VectorXd a(L);
    for (int l = 0; l < L; ++l) a(l) = u(rng);
    const MatrixXd A = Q * a.asDiagonal();
    VectorXd c(D), s(D);
    for (int d = 0; d < D; ++d) c(d) = g(rng);
    const double sigma2 = u(rng);
    VectorXd z_true(L);
    for (int l = 0; l < L; ++l) z_true(l) = g(rng);
    for (int d = 0; d < D; ++d) s(d) = (A * z_true + c)(d) + std::sqrt(sigma2) * g(rng);

    // ln p(s) = ln N(s; c, A A^T + sigma^2 I)
    const MatrixXd cov = A * A.transpose() + sigma2 * MatrixXd::Identity(D, D);
    const Eigen::LLT<MatrixXd> llt(cov);
    const VectorXd r = s - c;
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double log_evidence = -0.5 * (D * std::log(2.0 * std::numbers::pi) + logdet + r.dot(llt.solve(r)));

    // exact posterior
    const MatrixXd prec = MatrixXd::Identity(L, L) + A.transpose() * A / sigma2;
    const MatrixXd post_cov = prec.inverse();
    const VectorXd post_mean = post_cov * A.transpose() * r / sigma2;

    const auto vfe = [&](const VectorXd& mu, const VectorXd& var) {
      const double expected_ll = -0.5 * D * std::log(2.0 * std::numbers::pi * sigma2) -
                                 0.5 / sigma2 * ((r - A * mu).squaredNorm() + (A.transpose() * A * var.asDiagonal()).trace());
      PosteriorParams q{Tensor::matrix(1, std::size_t(L)), Tensor::matrix(1, std::size_t(L))};
      for (int l = 0; l < L; ++l) {
        q.mean[std::size_t(l)] = mu(l);
        q.var[std::size_t(l)] = var(l);
      }
      return expected_ll - kl_to_prior(q);
    };
    const auto kl_to_posterior = [&](const VectorXd& mu, const VectorXd& var) {
      double kl = 0.0;
      for (int l = 0; l < L; ++l) {
        const double vp = post_cov(l, l), dm = post_mean(l) - mu(l);
        kl += 0.5 * (var(l) / vp + dm * dm / vp - 1.0 + std::log(vp / var(l)));
      }
      return kl;
    };

    const VectorXd exact_var = post_cov.diagonal();
    const double exact = vfe(post_mean, exact_var);
    worst_exact_gap = std::max(worst_exact_gap, std::abs(log_evidence - exact));
    worst_bound = std::max(worst_bound, exact - log_evidence);
    for (int k = 0; k < 10; ++k) {
      VectorXd mu = post_mean, var = exact_var;
      for (int l = 0; l < L; ++l) {
        mu(l) += 0.7 * g(rng);
        var(l) *= std::exp(0.8 * g(rng));
      }
      const double bound = vfe(mu, var);
      worst_bound = std::max(worst_bound, bound - log_evidence);
      worst_gap_err = std::max(worst_gap_err, std::abs((log_evidence - bound) - kl_to_posterior(mu, var)));
      ++cases;
    }
  }
  const bool ok = worst_bound <= 1e-8 && worst_gap_err <= 1e-8 && worst_exact_gap <= 1e-8;
  return {ok, std::to_string(cases) + " q's on 50 toys: max (VFE - ln p(s)) = " + num(worst_bound) +
                  ", max |gap - KL(q||post)| = " + num(worst_gap_err) + ", gap at exact posterior " +
                  num(worst_exact_gap)};
}

// ---- 5 ---------------------------------------------------------------------------------

double is_cost(const MatrixXd& p, const std::vector<VarianceField>& vs, const NoiseMixtureParams& phi) {
  const MatrixXd vb = phi.basis * phi.activations;
  double c = 0.0;
  for (const auto& s : vs)
    for (Eigen::Index n = 0; n < p.cols(); ++n)
      for (Eigen::Index f = 0; f < p.rows(); ++f) {
        const double ratio = p(f, n) / (phi.gain(n) * s.values(f, n) + vb(f, n));
        c += ratio - std::log(ratio) - 1.0;
      }
  return c;
}

Outcome mstep_check() {
  constexpr std::size_t kTrials = 1000, kSweeps = 200;
  double worst_rise = 0.0, worst_fixed = 0.0;
  for (std::size_t t = 0; t < kTrials; ++t) {
    auto rng = make_rng(t, "acceptance.mstep");
    std::uniform_int_distribution<int> size(10, 40), rank(1, 8), samples(1, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int F = size(rng), N = size(rng), K = rank(rng), R = samples(rng);
    const MatrixXd p = lognormal(F, N, rng, 1.5);
    std::vector<VarianceField> vs;
    for (int r = 0; r < R; ++r) vs.push_back({lognormal(F, N, rng)});
    NoiseMixtureParams phi = NoiseMixtureParams::init(std::size_t(F), std::size_t(N), std::size_t(K), rng);
    for (int n = 0; n < N; ++n) phi.gain(n) = 0.1 + 2.0 * u(rng);
    double cost = is_cost(p, vs, phi);
    for (std::size_t k = 0; k < kSweeps; ++k) {
      phi = mstep_update(std::move(phi), p, vs);
      const double next = is_cost(p, vs, phi);
      worst_rise = std::max(worst_rise, (next - cost) / std::abs(cost));
      cost = next;
    }

    // fixed point: |X|^2 equal to the model variance
    NoiseMixtureParams fp = NoiseMixtureParams::init(std::size_t(F), std::size_t(N), std::size_t(K), rng);
    for (int n = 0; n < N; ++n) fp.gain(n) = 0.1 + 2.0 * u(rng);
    const std::vector<VarianceField> one{vs[0]};
    const MatrixXd vx = vs[0].values * fp.gain.asDiagonal() + fp.basis * fp.activations;
    const NoiseMixtureParams next = mstep_update(fp, vx, one);
    const auto rel = [](const auto& a, const auto& b) { return ((a - b).array().abs() / b.array().abs()).maxCoeff(); };
    worst_fixed = std::max({worst_fixed, rel(next.basis, fp.basis), rel(next.activations, fp.activations),
                            rel(next.gain, fp.gain)});
  }
  return {worst_rise <= 1e-9 && worst_fixed <= 1e-12,
          "1000 trials x 200 sweeps, max relative rise of C " + num(worst_rise) + " (<= 1e-9), fixed-point drift " +
              num(worst_fixed) + " (<= 1e-12)"};
}

// ---- 6 ---------------------------------------------------------------------------------

Outcome stft_check() {
  double worst_rt = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto rng = make_rng(seed, "acceptance.stft");
    std::normal_distribution<double> g;
    Waveform w;
    w.samples.resize(16000);
    for (double& x : w.samples) x = g(rng);
    const Waveform back = istft(stft(w), w.size());
    double err = 0.0, ref = 0.0;
    for (std::size_t i = kWindowSize; i + kWindowSize < w.size(); ++i) {
      err += (back.samples[i] - w.samples[i]) * (back.samples[i] - w.samples[i]);
      ref += w.samples[i] * w.samples[i];
    }
    worst_rt = std::max(worst_rt, std::sqrt(err / ref));
  }
  // sum over the overlapping frames of w^2, sine window of 1024 at hop 256
  const auto w = sine_window(kWindowSize);
  double worst_shape = 0.0, worst_cola = 0.0;
  for (std::size_t k = 0; k < kWindowSize; ++k)
    worst_shape = std::max(worst_shape, std::abs(w[k] - std::sin(std::numbers::pi * (double(k) + 0.5) / kWindowSize)));
  const std::size_t hop = kWindowSize / 4;
  for (std::size_t n = 0; n < hop; ++n) {
    double sum = 0.0;
    for (std::size_t j = n; j < kWindowSize; j += hop) sum += w[j] * w[j];
    worst_cola = std::max(worst_cola, std::abs(sum - 2.0));
  }
  return {worst_rt < 1e-6 && worst_cola <= 1e-10 && worst_shape <= 1e-12,
          "round-trip interior rel L2 " + num(worst_rt) + " (< 1e-6), |COLA - 2| " + num(worst_cola) + " (<= 1e-10)"};
}

// ---- 7 ---------------------------------------------------------------------------------

using Mask = std::vector<std::vector<bool>>;

template <class Fn>
Mask dependency(std::size_t N, const Tensor& input, Fn&& f) {
  const Tensor base = f(input);
  Mask dep(N, std::vector<bool>(N));
  for (std::size_t m = 0; m < N; ++m) {
    Tensor x = input;
    for (std::size_t c = 0; c < x.cols(); ++c) x(m, c) += 0.5;
    const Tensor y = f(x);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < y.cols(); ++c)
        if (y(n, c) != base(n, c)) dep[n][m] = true;
  }
  return dep;
}

Outcome dependency_check() {
  std::size_t mismatches = 0, masks = 0;
  for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ModelDims dims{3, 7, 5};
      const std::size_t N = 8;
      auto rng = make_rng(seed, "acceptance.masks");
      const auto dec = DecoderParams::init(v, dims, rng);
      const auto enc = EncoderParams::init(v, dims, rng);
      const Tensor z0 = standard_normal(N, dims.latent, rng);
      const Tensor s0 = encoder_features(lognormal(Eigen::Index(dims.freqs), Eigen::Index(N), rng));

      // p(s_n | z_{?}): ffnn z_n, rnn z_{0:n}, brnn z_{0:N-1}
      const Mask d = dependency(N, z0, [&](const Tensor& z) {
        Tensor out = Tensor::matrix(N, dims.freqs);
        out.as_matrix() = decode(dec, {z}).values.transpose();
        return out;
      });
      // q(z_n | z_{0:n-1}, s_?): ffnn s_n only, rnn s_{n:N-1}, brnn s_{0:N-1}
      const auto run = [&](const Tensor& feats, const Tensor& z) {
        ad::Tape tape;
        const Bindings b(tape, enc.tensors, false);
        const EncoderPass pass =
            encode_on_tape(enc, b, tape.constant(feats), 1, Tensor::matrix(N, dims.latent), nullptr, &z);
        Tensor out = Tensor::matrix(N, 2 * dims.latent);
        out.as_matrix() << pass.mean.value().as_matrix(), pass.var.value().as_matrix();
        return out;
      };
      const Mask es = dependency(N, s0, [&](const Tensor& f) { return run(f, z0); });
      const Mask ez = dependency(N, z0, [&](const Tensor& z) { return run(s0, z); });
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < N; ++m) {
          const bool dec_want = v == Variant::ffnn ? m == n : v == Variant::rnn ? m <= n : true;
          const bool s_want = v == Variant::ffnn ? m == n : v == Variant::rnn ? m >= n : true;
          const bool z_want = v != Variant::ffnn && m < n;
          mismatches += (d[n][m] != dec_want) + (es[n][m] != s_want) + (ez[n][m] != z_want);
        }
      masks += 3;
    }
  }
  return {mismatches == 0, std::to_string(masks) + " masks over 3 variants, " + std::to_string(mismatches) +
                               " mismatched entries"};
}

// ---- 8 ---------------------------------------------------------------------------------

struct TestMixture {
  NoiseType type;
  Mixture mix;
};

std::vector<TestMixture> heldout_mixtures(std::size_t count, std::uint64_t seed, double seconds) {
  std::vector<TestMixture> out;
  const auto types = all_noise_types();
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_rng(seed, "acceptance.heldout." + std::to_string(i));
    const Waveform clean = synth_utterance(seconds, rng);
    const NoiseType type = types[i % types.size()];
    const Waveform noise = synth_noise(type, clean.size() + kSampleRate, rng);
    out.push_back({type, mix_at_snr({clean, noise, 0.0, derive_seed(seed, "acceptance.mix." + std::to_string(i))})});
  }
  return out;
}

double improvement(const Mixture& m, const Waveform& estimate) {
  const Waveform ref = trim_edges(m.scaled_clean);
  return si_sdr(ref, trim_edges(estimate)) - si_sdr(ref, trim_edges(m.mixture));
}

Outcome oracle_wiener_check() {
  std::vector<double> gains;
  for (const auto& t : heldout_mixtures(20, 8, 2.0)) {
    const ComplexSpectrogram X = stft(t.mix.mixture);
    const MatrixXd vs = stft(t.mix.scaled_clean).power().cwiseMax(1e-20);
    const MatrixXd vb = stft(t.mix.scaled_noise).power().cwiseMax(1e-20);
    NoiseMixtureParams phi;
    phi.basis = vb;
    phi.activations = MatrixXd::Identity(vb.cols(), vb.cols());
    phi.gain = VectorXd::Ones(vb.cols());
    const std::vector<VarianceField> speech{{vs}};
    gains.push_back(improvement(t.mix, istft(wiener_reconstruct(X, speech, phi), t.mix.mixture.size())));
  }
  const double worst = *std::min_element(gains.begin(), gains.end());
  return {worst >= 10.0, "20 mixtures at 0 dB, SI-SDR improvement min " + num(worst, "%.2f") + " dB, median " +
                             num(median(gains), "%.2f") + " dB (>= 10 dB each)"};
}

// ---- 9 ---------------------------------------------------------------------------------

std::vector<MatrixXd> load_list(const fs::path& list) {
  std::vector<MatrixXd> out;
  for (const auto& f : read_list(list)) out.push_back(stft(read_wav(f)).power());
  return out;
}

Outcome end_to_end_check(const Args& args) {
  const double cpu0 = cpu_seconds();
  TempDir dir("e2e");
  write_synth_corpus(dir.path / "corpus", args.e2e_minutes, 2024);
  const auto corpus = load_list(dir.path / "corpus" / "train.list");
  const auto validation = load_list(dir.path / "corpus" / "val.list");

  TrainConfig cfg;
  cfg.variant = Variant::rnn;
  cfg.latent = 16;
  cfg.hidden = args.e2e_hidden;
  cfg.max_epochs = args.e2e_epochs;
  cfg.seed = 2024;
  const TrainResult trained = train(corpus, validation, cfg);
  const double train_cpu = cpu_seconds() - cpu0;
  const Model& model = trained.checkpoint.model;

  const auto mixtures = heldout_mixtures(args.e2e_count, 9, 2.0);
  std::vector<double> vem;
  for (std::size_t i = 0; i < mixtures.size(); ++i) {
    EnhanceConfig ec;
    ec.iterations = 500;
    ec.estep_grad_steps = args.e2e_estep_steps;
    ec.seed = i;
    vem.push_back(improvement(mixtures[i].mix, enhance(mixtures[i].mix.mixture, model, ec).speech));
  }
  const double total_cpu = cpu_seconds() - cpu0;

  std::vector<double> peem;
  for (std::size_t i = 0; i < mixtures.size(); ++i) {
    EnhanceConfig ec;
    ec.algorithm = Algorithm::peem;
    ec.iterations = 500;
    ec.estep_grad_steps = args.e2e_estep_steps;
    ec.seed = i;
    peem.push_back(improvement(mixtures[i].mix, enhance(mixtures[i].mix.mixture, model, ec).speech));
  }
  const double vem_med = median(vem), peem_med = median(peem);
  std::cout << "  criterion 9 detail: train " << num(train_cpu, "%.0f") << " s CPU, " << trained.history.size()
            << " epochs, best epoch " << trained.checkpoint.meta.epoch << " (val VFE/frame "
            << num(trained.checkpoint.meta.validation_vfe.value_or(NAN), "%.1f") << ")\n";
  for (std::size_t i = 0; i < mixtures.size(); ++i)
    std::cout << "  mixture " << i << " " << to_string(mixtures[i].type) << ": VEM " << num(vem[i], "%+.2f")
              << " dB, PEEM " << num(peem[i], "%+.2f") << " dB\n";
  std::cout << "  directional check (non-binding): VEM median " << num(vem_med, "%.2f") << " dB "
            << (vem_med >= peem_med ? ">=" : "<") << " PEEM median " << num(peem_med, "%.2f") << " dB\n";

  const bool ok = vem_med >= 3.0 && total_cpu <= 3600.0;
  return {ok, std::to_string(mixtures.size()) + " held-out 0 dB mixtures, RNN L=16 H=" + std::to_string(cfg.hidden) +
                  " on " + num(args.e2e_minutes, "%g") + " min, " + std::to_string(args.e2e_estep_steps) +
                  " E-step steps: VEM median improvement " + num(vem_med, "%.2f") +
                  " dB (>= 3), train+VEM " + num(total_cpu / 60.0, "%.1f") + " min CPU (<= 60)"};
}

// ---- 10 --------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism_check(const Args& args) {
  if (args.cli.empty() || !fs::exists(args.cli)) return {false, "rvae binary not given (--cli)"};
  TempDir dir("determinism");
  const std::vector<std::string> steps = {
      "synth-corpus --out corpus --minutes 0.4 --seed 7",
      "train --train corpus/train.list --val corpus/val.list --out ckpt --hidden 16 --L 4 --epochs 3 --max-steps 6 "
      "--seed 7 --quiet",
      "mix --clean corpus/utt_00000.wav --noise-type modulated --snr 0 --seed 7 --out mix.wav --clean-out clean.wav",
      "enhance --ckpt ckpt --in mix.wav --out vem.wav --iters 15 --seed 7 --trace-csv vem.csv",
      "enhance --ckpt ckpt --in mix.wav --out peem.wav --alg peem --iters 15 --seed 7 --trace-csv peem.csv",
      "make-testset --clean corpus/val.list --out testset --snr -5,0,5 --seed 7",
      "evaluate --ckpt ckpt --testset testset --report report.csv --alg vem,peem --iters 5 --seed 7 --jobs 2",
      "gradcheck --seeds 2 --trials 20 --sweeps 20 --seed 7 > gradcheck.txt",
  };
  for (const char* run : {"a", "b"}) {
    fs::create_directories(dir.path / run);
    for (const auto& step : steps) {
      const std::string cmd = "cd '" + (dir.path / run).string() + "' && SOURCE_DATE_EPOCH=1700000000 '" +
                              fs::absolute(args.cli).string() + "' " + step +
                              (step.find('>') == std::string::npos ? " >>stdout.log" : "") + " 2>/dev/null";
      if (std::system(cmd.c_str()) != 0) return {false, "command failed: rvae " + step};
    }
  }
  std::size_t files = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::recursive_directory_iterator(dir.path / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir.path / "a");
    ++files;
    if (!fs::exists(dir.path / "b" / rel) || slurp(e.path()) != slurp(dir.path / "b" / rel)) differ.push_back(rel.string());
  }
  std::string detail = std::to_string(steps.size()) + " commands run twice, " + std::to_string(files) +
                       " output files compared, " + std::to_string(differ.size()) + " differ";
  for (const auto& d : differ) detail += " " + d;
  return {differ.empty() && files > 0, detail};
}

Args parse_args(int argc, char** argv) {
  Args a;
  for (int i = 1; i < argc; ++i) {
    const std::string k = argv[i];
    const auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw std::invalid_argument("missing value for " + k);
      return argv[++i];
    };
    if (k == "--only") {
      std::stringstream ss(next());
      for (std::string t; std::getline(ss, t, ',');) a.only.insert(std::stoi(t));
    } else if (k == "--cli") {
      a.cli = next();
    } else if (k == "--e2e-minutes") {
      a.e2e_minutes = std::stod(next());
    } else if (k == "--e2e-hidden") {
      a.e2e_hidden = std::stoul(next());
    } else if (k == "--e2e-epochs") {
      a.e2e_epochs = std::stoul(next());
    } else if (k == "--e2e-count") {
      a.e2e_count = std::stoul(next());
    } else if (k == "--e2e-estep-steps") {
      a.e2e_estep_steps = std::stoul(next());
    } else {
      throw std::invalid_argument("unknown argument " + k);
    }
  }
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  rvae::ad::tune_allocator();
  Args args;
  try {
    args = parse_args(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite_check},
      {"VFE decomposition", vfe_decomposition_check},
      {"KL vs Monte Carlo", kl_monte_carlo_check},
      {"lower bound on linear-Gaussian toy", lower_bound_check},
      {"M-step monotonicity and fixed point", mstep_check},
      {"STFT round trip and COLA", stft_check},
      {"dependency masks", dependency_check},
      {"oracle Wiener filtering", oracle_wiener_check},
      {"desk-scale end-to-end", [&] { return end_to_end_check(args); }},
      {"determinism", [&] { return determinism_check(args); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!args.only.empty() && !args.only.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << " [" << num(secs, "%.1f") << " s]\n"
              << std::flush;
    failures += !o.passed;
  }
  return failures ? 1 : 0;
}
