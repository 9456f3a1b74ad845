#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Core>

#include "rvae/autodiff.hpp"
#include "rvae/layers.hpp"
#include "rvae/signal.hpp"
#include "rvae/tensor.hpp"

namespace rvae {

/// Which generative/inference structure is used:
///  ffnn - frame n of v_s depends on z_n only; q(z_n | s_n)
///  rnn  - frame n depends on z_{0:n}; q(z_n | z_{0:n-1}, s_{n:N-1})
///  brnn - frame n depends on all of z; q(z_n | z_{0:n-1}, s)
enum class Variant { ffnn, rnn, brnn };

std::string to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ModelDims {
  std::size_t latent = 16;
  std::size_t freqs = 513;
  std::size_t hidden = 128;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

inline constexpr double kVarianceFloor = 1e-10;

/// N x L latent vectors, one row per frame.
struct LatentSequence {
  Tensor values;

  std::size_t frames() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

/// F x N strictly positive variances (v_s, v_b or v_x).
struct VarianceField {
  Eigen::MatrixXd values;

  std::size_t freqs() const { return std::size_t(values.rows()); }
  std::size_t frames() const { return std::size_t(values.cols()); }
};

// ---- decoder (generative speech model) ------------------------------------------------

struct DecoderParams {
  Variant variant = Variant::rnn;
  ModelDims dims;
  ParamSet tensors;

  static DecoderParams init(Variant variant, ModelDims dims, std::mt19937_64& rng);
  /// Throws ConfigError when a tensor is missing or mis-shaped.
  void validate() const;
};

/// Speech variances for a time-major stacked latent input ((N*B) x L).
/// Returns (N*B) x F, floored at kVarianceFloor.
ad::Var decode_on_tape(const DecoderParams& params, const Bindings& bound, ad::Var z_stacked, std::size_t batch,
                       const Tensor* step_mask = nullptr);

VarianceField decode(const DecoderParams& params, const LatentSequence& z);

/// i.i.d. standard normal N x L.
LatentSequence sample_prior(std::size_t frames, std::size_t latent, std::mt19937_64& rng);

/// sum_{f,n} [-ln pi - ln v_fn - |s_fn|^2 / v_fn]
double log_likelihood(const Eigen::MatrixXd& power, const VarianceField& v);
double log_likelihood(const ComplexSpectrogram& spec, const VarianceField& v);

// ---- encoder (inference model) -----------------------------------------------------

struct EncoderParams {
  Variant variant = Variant::rnn;
  ModelDims dims;
  ParamSet tensors;

  static EncoderParams init(Variant variant, ModelDims dims, std::mt19937_64& rng);
  void validate() const;
};

/// Gaussian posterior parameters, N x L each.
struct PosteriorParams {
  Tensor mean;
  Tensor var;
};

/// Encoder input features from an F x N power spectrogram: N x F, log(1 + |s|^2).
Tensor encoder_features(const Eigen::MatrixXd& power);

struct EncoderPass {
  ad::Var z;     // (N*B) x L
  ad::Var mean;  // (N*B) x L
  ad::Var var;   // (N*B) x L
};

/// Recursive posterior sampling z_n = mu_n + sqrt(v_n) * eps_n, n = 0..N-1.
/// `eps` is (N*B) x L. When `forced_z` is given, the prediction block is fed
/// those latents instead of the sampled ones (teacher forcing).
EncoderPass encode_on_tape(const EncoderParams& params, const Bindings& bound, ad::Var features, std::size_t batch,
                           const Tensor& eps, const Tensor* step_mask = nullptr, const Tensor* forced_z = nullptr);

/// Posterior parameters of frame n given z_{0:n-1} (rows 0..n-1 of z_past are
/// used) and the observed spectrogram.
std::pair<Tensor, Tensor> encode_step(const EncoderParams& params, const Tensor& z_past,
                                      const ComplexSpectrogram& spec, std::size_t n);

/// Ancestral sample from q(z | s). With `reparameterized` the encoder weights
/// are bound as differentiable leaves (only meaningful for tape users).
std::pair<LatentSequence, PosteriorParams> sample_posterior(const EncoderParams& params,
                                                            const Eigen::MatrixXd& power, std::mt19937_64& rng,
                                                            bool reparameterized = false);
std::pair<LatentSequence, PosteriorParams> sample_posterior(const EncoderParams& params,
                                                            const ComplexSpectrogram& spec, std::mt19937_64& rng,
                                                            bool reparameterized = false);

/// Posterior means with z_n = mu_n fed back through the prediction block.
LatentSequence posterior_mean(const EncoderParams& params, const Eigen::MatrixXd& power);

/// sum_{n,l} 0.5 (mu^2 + v - ln v - 1)
double kl_to_prior(const PosteriorParams& post);

/// N x L standard normal draws.
Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

}  // namespace rvae
