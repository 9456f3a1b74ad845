#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rvae/adam.hpp"
#include "rvae/model.hpp"
#include "rvae/signal.hpp"
#include "rvae/training.hpp"

namespace rvae {

inline constexpr double kNmfFloor = 1e-12;

/// phi = {g, W_b, H_b}: per-frame speech gain and the rank-K NMF noise model
/// v_b = W_b H_b.
struct NoiseMixtureParams {
  Eigen::MatrixXd basis;        // W_b, F x K
  Eigen::MatrixXd activations;  // H_b, K x N
  Eigen::VectorXd gain;         // g, N

  /// W_b, H_b ~ U[0, 1) (floored), g = 1.
  static NoiseMixtureParams init(std::size_t freqs, std::size_t frames, std::size_t rank, std::mt19937_64& rng);
  Eigen::MatrixXd noise_variance() const { return basis * activations; }
};

/// v_x,fn = g_n v_s,fn + (W_b H_b)_fn
VarianceField mixture_variance(const VarianceField& speech, const NoiseMixtureParams& phi);

/// C(phi) = sum_r sum_{f,n} d_IS(|x_fn|^2, v_x,fn(z^(r)))
double mstep_cost(const Eigen::MatrixXd& power, std::span<const VarianceField> speech_samples,
                  const NoiseMixtureParams& phi);

/// One majorise-minimise sweep: H_b, then W_b, then g, recomputing V_x
/// between sub-updates. Entries are floored at kNmfFloor.
NoiseMixtureParams mstep_update(NoiseMixtureParams phi, const Eigen::MatrixXd& power,
                                std::span<const VarianceField> speech_samples);

/// Optimiser state carried across E-steps of one utterance.
struct EStepState {
  AdamState adam;
  bool step_halved = false;
  std::vector<std::string> warnings;
};

struct EStepResult {
  std::size_t steps = 0;
  double objective = 0.0;  // free energy (VEM) or log posterior (PEEM) at the last evaluated point
  bool aborted = false;
};

/// Fine-tunes a private encoder copy by Adam ascent on the test-time free
/// energy (|s|^2 -> |x|^2, v_s -> v_x), with phi and the decoder frozen.
/// A non-finite step is reverted and the step size halved once; a second
/// failure aborts the E-step with a warning.
EStepResult estep_vem(EncoderParams& enc, EStepState& state, const DecoderParams& dec,
                      const NoiseMixtureParams& phi, const Eigen::MatrixXd& power, std::size_t grad_steps,
                      std::mt19937_64& rng);

/// ln p(x | z; phi) + ln p(z) up to additive constants:
///   -w * sum d_IS(|x|^2, v_x(z)) - 0.5 * sum z^2
/// `likelihood_weight` (w) exists for diagnostics; enhancement uses 1.
double peem_objective(const DecoderParams& dec, const NoiseMixtureParams& phi, const Eigen::MatrixXd& power,
                      const LatentSequence& z, double likelihood_weight = 1.0);
std::pair<double, Tensor> peem_objective_gradient(const DecoderParams& dec, const NoiseMixtureParams& phi,
                                                  const Eigen::MatrixXd& power, const LatentSequence& z,
                                                  double likelihood_weight = 1.0);

/// Adam ascent on the PEEM objective w.r.t. z.
LatentSequence estep_peem(const DecoderParams& dec, const NoiseMixtureParams& phi, const Eigen::MatrixXd& power,
                          LatentSequence z, EStepState& state, std::size_t grad_steps,
                          EStepResult* result = nullptr, double likelihood_weight = 1.0);

/// Scaled posterior-mean speech estimate sqrt(g_n) * s_hat_fn, i.e. the
/// per-sample Wiener gain g_n v_s / v_x averaged over samples, times x_fn.
ComplexSpectrogram wiener_reconstruct(const ComplexSpectrogram& mixture, std::span<const VarianceField> speech_samples,
                                      const NoiseMixtureParams& phi);

enum class Algorithm { vem, peem };
std::string to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);

struct EnhanceConfig {
  Algorithm algorithm = Algorithm::vem;
  std::size_t iterations = 500;
  std::size_t rank = 8;                           // K
  std::optional<std::size_t> estep_grad_steps;    // default: 10 for ffnn, 1 for rnn/brnn
  double estep_step_size = 1e-2;
  std::size_t samples = 1;                        // R
  std::uint64_t seed = 0;

  std::size_t grad_steps_for(Variant v) const;
  void validate() const;
};

struct TraceRow {
  std::size_t iteration = 0;
  double cost = 0.0;  // C(phi) after the M-step
  double vfe = 0.0;   // E-step objective estimate
};

struct EnhanceResult {
  Waveform speech;
  ComplexSpectrogram spectrogram;
  NoiseMixtureParams phi;
  std::vector<TraceRow> trace;
  std::vector<std::string> warnings;
};

using IterationObserver = std::function<void(const TraceRow&)>;

/// Alternates E-steps and M-sweeps for cfg.iterations, then reconstructs the
/// speech estimate and trims it to the input length. The model is not modified.
EnhanceResult enhance(const Waveform& mixture, const Model& model, const EnhanceConfig& cfg,
                      const IterationObserver& observer = {});

}  // namespace rvae
