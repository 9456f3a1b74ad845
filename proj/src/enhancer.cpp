#include "rvae/enhancer.hpp"

#include <algorithm>
#include <cmath>

#include "rvae/errors.hpp"
#include "rvae/rng.hpp"

namespace rvae {

namespace {

using Eigen::ArrayXXd;
using Eigen::MatrixXd;

void check_speech_samples(const MatrixXd& power, std::span<const VarianceField> samples) {
  if (samples.empty()) throw ContractError("at least one speech variance sample is required");
  for (const auto& s : samples)
    if (s.values.rows() != power.rows() || s.values.cols() != power.cols())
      throw DimensionError("speech variance sample does not match the mixture spectrogram");
}

void check_phi(const NoiseMixtureParams& phi, const MatrixXd& power) {
  if (phi.basis.rows() != power.rows() || phi.activations.cols() != power.cols() ||
      phi.basis.cols() != phi.activations.rows() || phi.gain.size() != power.cols())
    throw DimensionError("noise/mixture parameters do not match the mixture spectrogram");
}

// Row-major (N x F) copy of an F x N matrix, the layout used on tapes.
Tensor frames_by_freqs(const MatrixXd& m) {
  Tensor t = Tensor::matrix(std::size_t(m.cols()), std::size_t(m.rows()));
  t.as_matrix() = m.transpose();
  return t;
}

MixtureTerms mixture_terms(const NoiseMixtureParams& phi) {
  MixtureTerms terms;
  terms.gain = Tensor::matrix(std::size_t(phi.gain.size()), 1);
  for (Eigen::Index n = 0; n < phi.gain.size(); ++n) terms.gain[std::size_t(n)] = phi.gain(n);
  terms.noise_var = frames_by_freqs(phi.noise_variance());
  return terms;
}

bool finite(const ParamSet& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

// Handles a non-finite step. Returns true if the E-step should continue.
bool recover(ParamSet& params, const std::optional<ParamSet>& previous, EStepState& state, EStepResult& res,
             const char* which) {
  if (previous) params = *previous;
  if (!state.step_halved) {
    state.adam.set_step_size(state.adam.config().step_size / 2.0);
    state.step_halved = true;
    return true;
  }
  res.aborted = true;
  state.warnings.push_back(std::string(which) + " E-step aborted: non-finite objective after halving the step size");
  return false;
}

}  // namespace

NoiseMixtureParams NoiseMixtureParams::init(std::size_t freqs, std::size_t frames, std::size_t rank,
                                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  NoiseMixtureParams phi;
  phi.basis.resize(Eigen::Index(freqs), Eigen::Index(rank));
  phi.activations.resize(Eigen::Index(rank), Eigen::Index(frames));
  for (Eigen::Index j = 0; j < phi.basis.cols(); ++j)
    for (Eigen::Index i = 0; i < phi.basis.rows(); ++i) phi.basis(i, j) = std::max(u(rng), kNmfFloor);
  for (Eigen::Index j = 0; j < phi.activations.cols(); ++j)
    for (Eigen::Index i = 0; i < phi.activations.rows(); ++i) phi.activations(i, j) = std::max(u(rng), kNmfFloor);
  phi.gain = Eigen::VectorXd::Ones(Eigen::Index(frames));
  return phi;
}

VarianceField mixture_variance(const VarianceField& speech, const NoiseMixtureParams& phi) {
  if (phi.basis.rows() != speech.values.rows() || phi.activations.cols() != speech.values.cols() ||
      phi.gain.size() != speech.values.cols())
    throw DimensionError("mixture_variance: shapes of v_s and phi differ");
  return {speech.values * phi.gain.asDiagonal() + phi.noise_variance()};
}

double mstep_cost(const MatrixXd& power, std::span<const VarianceField> speech_samples,
                  const NoiseMixtureParams& phi) {
  check_speech_samples(power, speech_samples);
  check_phi(phi, power);
  const ArrayXXd p = power.array();
  const ArrayXXd log_p = p.max(ad::kPowerFloor).log();
  const MatrixXd vb = phi.noise_variance();
  double cost = 0.0;
  for (const auto& vs : speech_samples) {
    const ArrayXXd vx = (vs.values * phi.gain.asDiagonal() + vb).array();
    cost += (p / vx - log_p + vx.log() - 1.0).sum();
  }
  return cost;
}

NoiseMixtureParams mstep_update(NoiseMixtureParams phi, const MatrixXd& power,
                                std::span<const VarianceField> speech_samples) {
  check_speech_samples(power, speech_samples);
  check_phi(phi, power);
  const ArrayXXd p = power.array();
  const Eigen::Index F = power.rows(), N = power.cols();

  // sum_r V_x^-1 and sum_r V_x^-2 for the current phi
  ArrayXXd inv1(F, N), inv2(F, N);
  const auto refresh = [&] {
    const MatrixXd vb = phi.noise_variance();
    inv1.setZero();
    inv2.setZero();
    for (const auto& vs : speech_samples) {
      const ArrayXXd r = (vs.values * phi.gain.asDiagonal() + vb).array().inverse();
      inv1 += r;
      inv2 += r.square();
    }
  };

  refresh();
  {
    const MatrixXd num = phi.basis.transpose() * (p * inv2).matrix();
    const MatrixXd den = phi.basis.transpose() * inv1.matrix();
    phi.activations = (phi.activations.array() * (num.array() / den.array()).sqrt()).max(kNmfFloor).matrix();
  }
  refresh();
  {
    const MatrixXd num = (p * inv2).matrix() * phi.activations.transpose();
    const MatrixXd den = inv1.matrix() * phi.activations.transpose();
    phi.basis = (phi.basis.array() * (num.array() / den.array()).sqrt()).max(kNmfFloor).matrix();
  }
  {
    const MatrixXd vb = phi.noise_variance();
    Eigen::ArrayXd num = Eigen::ArrayXd::Zero(N), den = Eigen::ArrayXd::Zero(N);
    for (const auto& vs : speech_samples) {
      const ArrayXXd r = (vs.values * phi.gain.asDiagonal() + vb).array().inverse();
      const ArrayXXd s = vs.values.array();
      num += (p * s * r.square()).colwise().sum().transpose();
      den += (s * r).colwise().sum().transpose();
    }
    phi.gain = (phi.gain.array() * (num / den).sqrt()).max(kNmfFloor).matrix();
  }
  return phi;
}

EStepResult estep_vem(EncoderParams& enc, EStepState& state, const DecoderParams& dec,
                      const NoiseMixtureParams& phi, const MatrixXd& power, std::size_t grad_steps,
                      std::mt19937_64& rng) {
  check_phi(phi, power);
  const SequenceBatch batch = SequenceBatch::single(power);
  const MixtureTerms mix = mixture_terms(phi);
  EStepResult res;
  std::optional<ParamSet> previous;
  for (std::size_t s = 0; s < grad_steps; ++s) {
    const Tensor eps = standard_normal(batch.rows(), enc.dims.latent, rng);
    ad::Tape tape;
    const Bindings bd(tape, dec.tensors, false), be(tape, enc.tensors, true);
    const FreeEnergyGraph g = build_free_energy(dec, bd, enc, be, batch, eps, &mix);
    res.objective = g.objective.value()[0];
    tape.backward(g.objective);
    const ParamSet grads = be.gradients();
    if (!std::isfinite(res.objective) || !finite(grads)) {
      if (recover(enc.tensors, previous, state, res, "VEM")) continue;
      break;
    }
    previous = enc.tensors;
    state.adam.maximize(enc.tensors, grads);
    ++res.steps;
  }
  return res;
}

std::pair<double, Tensor> peem_objective_gradient(const DecoderParams& dec, const NoiseMixtureParams& phi,
                                                  const MatrixXd& power, const LatentSequence& z,
                                                  double likelihood_weight) {
  check_phi(phi, power);
  if (z.frames() != std::size_t(power.cols()) || z.dim() != dec.dims.latent)
    throw DimensionError("peem: latent sequence must be N x L");
  const MixtureTerms mix = mixture_terms(phi);
  ad::Tape tape;
  const Bindings bd(tape, dec.tensors, false);
  const ad::Var zv = tape.variable(z.values.reshaped({z.frames(), z.dim()}));
  const ad::Var vs = decode_on_tape(dec, bd, zv, 1);
  const ad::Var vx = ad::add(ad::scale_rows(vs, mix.gain), tape.constant(mix.noise_var));
  const ad::Var is = ad::is_divergence_sum(vx, frames_by_freqs(power), Tensor::matrix(z.frames(), 1, 1.0));
  const ad::Var prior = ad::scale(ad::sum(ad::square(zv)), 0.5);
  const ad::Var objective = ad::scale(ad::add(ad::scale(is, likelihood_weight), prior), -1.0);
  tape.backward(objective);
  return {objective.value()[0], tape.grad(zv)};
}

double peem_objective(const DecoderParams& dec, const NoiseMixtureParams& phi, const MatrixXd& power,
                      const LatentSequence& z, double likelihood_weight) {
  return peem_objective_gradient(dec, phi, power, z, likelihood_weight).first;
}

LatentSequence estep_peem(const DecoderParams& dec, const NoiseMixtureParams& phi, const MatrixXd& power,
                          LatentSequence z, EStepState& state, std::size_t grad_steps, EStepResult* result,
                          double likelihood_weight) {
  EStepResult res;
  ParamSet params{{"z", std::move(z.values)}};
  std::optional<ParamSet> previous;
  for (std::size_t s = 0; s < grad_steps; ++s) {
    auto [objective, grad] = peem_objective_gradient(dec, phi, power, {params.at("z")}, likelihood_weight);
    res.objective = objective;
    if (!std::isfinite(objective) || !grad.all_finite()) {
      if (recover(params, previous, state, res, "PEEM")) continue;
      break;
    }
    previous = params;
    state.adam.maximize(params, ParamSet{{"z", std::move(grad)}});
    ++res.steps;
  }
  if (result) *result = res;
  return {std::move(params.at("z"))};
}

ComplexSpectrogram wiener_reconstruct(const ComplexSpectrogram& mixture, std::span<const VarianceField> speech_samples,
                                      const NoiseMixtureParams& phi) {
  const MatrixXd power = mixture.power();
  check_speech_samples(power, speech_samples);
  check_phi(phi, power);
  const MatrixXd vb = phi.noise_variance();
  ArrayXXd gain = ArrayXXd::Zero(power.rows(), power.cols());
  for (const auto& vs : speech_samples) {
    const MatrixXd scaled = vs.values * phi.gain.asDiagonal();
    gain += scaled.array() / (scaled + vb).array();
  }
  gain /= double(speech_samples.size());
  ComplexSpectrogram out = mixture;
  out.bins = (mixture.bins.array() * gain.cast<std::complex<double>>()).matrix();
  return out;
}

std::string to_string(Algorithm a) { return a == Algorithm::vem ? "vem" : "peem"; }

Algorithm parse_algorithm(std::string_view name) {
  if (name == "vem" || name == "VEM") return Algorithm::vem;
  if (name == "peem" || name == "PEEM") return Algorithm::peem;
  throw ConfigError("unknown algorithm '" + std::string(name) + "' (expected vem or peem)");
}

std::size_t EnhanceConfig::grad_steps_for(Variant v) const {
  if (estep_grad_steps) return *estep_grad_steps;
  return v == Variant::ffnn ? 10 : 1;
}

void EnhanceConfig::validate() const {
  if (iterations == 0 || rank == 0 || samples == 0) throw ConfigError("iterations, K and R must be positive");
  if (!(estep_step_size > 0.0)) throw ConfigError("E-step step size must be positive");
}

EnhanceResult enhance(const Waveform& mixture, const Model& model, const EnhanceConfig& cfg,
                      const IterationObserver& observer) {
  cfg.validate();
  if (model.decoder.variant != model.encoder.variant) throw ConfigError("model decoder/encoder variants differ");
  const ComplexSpectrogram spec = stft(mixture);
  const MatrixXd power = spec.power();
  const ModelDims& dims = model.dims();
  if (spec.freqs() != dims.freqs)
    throw ConfigError("mixture STFT has F=" + std::to_string(spec.freqs()) + " but the model expects F=" +
                      std::to_string(dims.freqs));
  const std::size_t frames = spec.frames();

  auto phi_rng = make_rng(cfg.seed, "enhance.nmf_init");
  auto eps_rng = make_rng(cfg.seed, "enhance.posterior");
  EnhanceResult result;
  result.phi = NoiseMixtureParams::init(dims.freqs, frames, cfg.rank, phi_rng);
  const std::size_t grad_steps = cfg.grad_steps_for(model.variant());
  EStepState state{AdamState(AdamConfig{cfg.estep_step_size, 0.9, 0.999, 1e-8}), false, {}};

  EncoderParams encoder = model.encoder;  // fine-tuned per utterance, then discarded
  LatentSequence z_map;
  if (cfg.algorithm == Algorithm::peem) z_map = posterior_mean(encoder, power);

  const auto draw_speech = [&]() {
    std::vector<VarianceField> samples;
    if (cfg.algorithm == Algorithm::peem) {
      samples.push_back(decode(model.decoder, z_map));
      return samples;
    }
    for (std::size_t r = 0; r < cfg.samples; ++r)
      samples.push_back(decode(model.decoder, sample_posterior(encoder, power, eps_rng).first));
    return samples;
  };

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    EStepResult e;
    if (cfg.algorithm == Algorithm::vem)
      e = estep_vem(encoder, state, model.decoder, result.phi, power, grad_steps, eps_rng);
    else
      z_map = estep_peem(model.decoder, result.phi, power, std::move(z_map), state, grad_steps, &e);
    const auto samples = draw_speech();
    result.phi = mstep_update(std::move(result.phi), power, samples);
    TraceRow row{it, mstep_cost(power, samples, result.phi), e.objective};
    result.trace.push_back(row);
    if (observer) observer(row);
  }

  const auto samples = draw_speech();
  result.spectrogram = wiener_reconstruct(spec, samples, result.phi);
  result.speech = istft(result.spectrogram, mixture.size(), mixture.sample_rate);
  result.warnings = std::move(state.warnings);
  return result;
}

}  // namespace rvae
