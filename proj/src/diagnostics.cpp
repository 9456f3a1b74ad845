#include "rvae/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rvae/enhancer.hpp"
#include "rvae/rng.hpp"
#include "rvae/training.hpp"

namespace rvae {

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t = standard_normal(rows, cols, rng);
  for (double& v : t.values()) v *= scale;
  return t;
}

Eigen::MatrixXd random_power(std::size_t freqs, std::size_t frames, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.5);
  Eigen::MatrixXd p{Eigen::Index(freqs), Eigen::Index(frames)};
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = std::exp(g(rng));
  return p;
}

ParamSet merge(const ParamSet& a, const ParamSet& b) {
  ParamSet out = a;
  out.insert(b.begin(), b.end());
  return out;
}

ParamSet with_prefix(const ParamSet& all, const std::string& prefix) {
  ParamSet out;
  for (const auto& [k, v] : all)
    if (k.starts_with(prefix)) out.emplace(k, v);
  return out;
}

// Evaluates a tape-built scalar and, optionally, its gradient w.r.t. every entry.
using Builder = std::function<ad::Var(const Bindings&)>;

double eval_loss(const Builder& build, const ParamSet& params) {
  ad::Tape tape;
  const Bindings b(tape, params, false);
  return build(b).value()[0];
}

ParamSet eval_grad(const Builder& build, const ParamSet& params) {
  ad::Tape tape;
  const Bindings b(tape, params, true);
  tape.backward(build(b));
  return b.gradients();
}

double check_builder(const Builder& build, const ParamSet& params, std::mt19937_64& rng) {
  return max_gradient_error([&](const ParamSet& p) { return eval_loss(build, p); }, params,
                            eval_grad(build, params), rng);
}

struct Accumulator {
  CheckResult result;

  Accumulator(std::string name, double tol) {
    result.name = std::move(name);
    result.tolerance = tol;
  }
  void add(double err) {
    result.worst = std::max(result.worst, std::isfinite(err) ? err : INFINITY);
    ++result.cases;
  }
  CheckResult finish() {
    result.passed = result.cases > 0 && result.worst < result.tolerance;
    std::ostringstream os;
    os << "max rel err " << result.worst << " over " << result.cases << " seeds (tol " << result.tolerance << ")";
    result.detail = os.str();
    return result;
  }
};

ParamSet lstm_params(const std::string& prefix, std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  ParamSet p;
  init_lstm(p, prefix, in, hidden, rng);
  // Non-trivial biases so every gate is exercised away from its init value.
  for (double& v : p.at(prefix + ".b").values()) v += std::normal_distribution<double>(0.0, 0.5)(rng);
  return p;
}

double check_dense(std::uint64_t seed) {
  auto rng = make_rng(seed, "gradcheck.dense");
  ParamSet p;
  init_dense(p, "d", 5, 4, rng);
  p["d.b"] = random_tensor(1, 4, rng, 0.5);
  p["x"] = random_tensor(3, 5, rng);
  const Tensor r = random_tensor(3, 4, rng);
  const Builder build = [&](const Bindings& b) {
    const ad::Var y = ad::tanh(layers::dense(b.at("x"), b.at("d.W"), b.at("d.b")));
    return ad::sum(ad::mul(y, b.tape().constant(r)));
  };
  return check_builder(build, p, rng);
}

double check_lstm(std::uint64_t seed, bool bidirectional, bool masked) {
  auto rng = make_rng(seed, bidirectional ? "gradcheck.bilstm" : masked ? "gradcheck.lstm_mask" : "gradcheck.lstm");
  const std::size_t frames = 5, batch = 2, in = 3, hidden = 4;
  ParamSet p = lstm_params("fw", in, hidden, rng);
  if (bidirectional) p = merge(p, lstm_params("bw", in, hidden, rng));
  p["x"] = random_tensor(frames * batch, in, rng);
  Tensor mask = Tensor::matrix(frames, batch, 1.0);
  if (masked) mask(frames - 1, 1) = mask(frames - 2, 1) = 0.0;
  const Tensor r = random_tensor(frames * batch, bidirectional ? 2 * hidden : hidden, rng);

  const Builder build = [&](const Bindings& b) {
    const Tensor* m = masked ? &mask : nullptr;
    auto fw = layers::lstm(b.at("x"), batch, LstmWeights::bind(b, "fw"), Direction::forward, m);
    ad::Var out = ad::stack_rows(fw);
    if (bidirectional) {
      auto bw = layers::lstm(b.at("x"), batch, LstmWeights::bind(b, "bw"), Direction::backward, m);
      const ad::Var parts[] = {out, ad::stack_rows(bw)};
      out = ad::concat_cols(parts);
    }
    return ad::sum(ad::mul(out, b.tape().constant(r)));
  };
  return check_builder(build, p, rng);
}

// Training free energy on a padded batch of two sequences.
double check_free_energy(std::uint64_t seed, Variant variant, bool mixture) {
  auto rng = make_rng(seed, "gradcheck.vfe." + to_string(variant) + (mixture ? ".mix" : ""));
  const ModelDims dims{3, 7, 4};
  const Model model = Model::init(variant, dims, derive_seed(seed, "gradcheck.model"));
  const Eigen::MatrixXd a = random_power(dims.freqs, 6, rng), b = random_power(dims.freqs, 4, rng);
  const SequenceBatch batch =
      mixture ? SequenceBatch::single(a) : make_batch({{&a, 0, 6}, {&b, 0, 4}}, 6);
  const Tensor eps = standard_normal(batch.rows(), dims.latent, rng);
  MixtureTerms terms;
  if (mixture) {
    terms.gain = Tensor::matrix(batch.rows(), 1);
    for (double& g : terms.gain.values()) g = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    terms.noise_var = Tensor::matrix(batch.rows(), dims.freqs);
    for (double& v : terms.noise_var.values()) v = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
  }

  // The test-time E-step differentiates only the encoder.
  const ParamSet point = mixture ? model.encoder.tensors : merge(model.decoder.tensors, model.encoder.tensors);
  const auto objective = [&](const ParamSet& params, bool grad, ParamSet* out) {
    DecoderParams dec = model.decoder;
    EncoderParams enc = model.encoder;
    if (!mixture) dec.tensors = with_prefix(params, "dec.");
    enc.tensors = with_prefix(params, "enc.");
    ad::Tape tape;
    const Bindings bd(tape, dec.tensors, grad && !mixture), be(tape, enc.tensors, grad);
    const FreeEnergyGraph g = build_free_energy(dec, bd, enc, be, batch, eps, mixture ? &terms : nullptr);
    if (grad) {
      tape.backward(g.objective);
      *out = mixture ? be.gradients() : merge(bd.gradients(), be.gradients());
    }
    return g.objective.value()[0];
  };
  ParamSet analytic;
  objective(point, true, &analytic);
  return max_gradient_error([&](const ParamSet& p) { return objective(p, false, nullptr); }, point, analytic, rng);
}

double check_peem(std::uint64_t seed, Variant variant) {
  auto rng = make_rng(seed, "gradcheck.peem." + to_string(variant));
  const ModelDims dims{3, 7, 4};
  const Model model = Model::init(variant, dims, derive_seed(seed, "gradcheck.model"));
  const std::size_t frames = 6;
  const Eigen::MatrixXd power = random_power(dims.freqs, frames, rng);
  const NoiseMixtureParams phi = NoiseMixtureParams::init(dims.freqs, frames, 2, rng);
  const LatentSequence z{random_tensor(frames, dims.latent, rng)};
  const auto [value, grad] = peem_objective_gradient(model.decoder, phi, power, z);
  (void)value;
  return max_gradient_error(
      [&](const ParamSet& p) { return peem_objective(model.decoder, phi, power, {p.at("z")}); },
      ParamSet{{"z", z.values}}, ParamSet{{"z", grad}}, rng);
}

}  // namespace

double max_gradient_error(const std::function<double(const ParamSet&)>& loss, ParamSet point,
                          const ParamSet& analytic, std::mt19937_64& rng, std::size_t per_tensor, double step,
                          double abs_floor) {
  double worst = 0.0;
  for (auto& [name, tensor] : point) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) continue;
    const std::size_t n = tensor.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(n, per_tensor));
    for (std::size_t i : idx) {
      const double saved = tensor[i];
      tensor[i] = saved + step;
      const double up = loss(point);
      tensor[i] = saved - step;
      const double down = loss(point);
      tensor[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = it->second[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      if (!std::isfinite(err)) return INFINITY;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

std::vector<CheckResult> gradient_suite(const GradcheckOptions& opts) {
  std::vector<Accumulator> acc;
  acc.emplace_back("dense", opts.layer_tolerance);
  acc.emplace_back("lstm", opts.layer_tolerance);
  acc.emplace_back("lstm_masked", opts.layer_tolerance);
  acc.emplace_back("bilstm", opts.layer_tolerance);
  for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) acc.emplace_back("vfe_" + to_string(v), opts.model_tolerance);
  for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn})
    acc.emplace_back("vfe_mixture_" + to_string(v), opts.model_tolerance);
  for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) acc.emplace_back("peem_" + to_string(v), opts.model_tolerance);

  for (std::size_t s = 0; s < opts.seeds; ++s) {
    const std::uint64_t seed = opts.base_seed + s;
    std::size_t k = 0;
    acc[k++].add(check_dense(seed));
    acc[k++].add(check_lstm(seed, false, false));
    acc[k++].add(check_lstm(seed, false, true));
    acc[k++].add(check_lstm(seed, true, false));
    for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) acc[k++].add(check_free_energy(seed, v, false));
    for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) acc[k++].add(check_free_energy(seed, v, true));
    for (Variant v : {Variant::ffnn, Variant::rnn, Variant::brnn}) acc[k++].add(check_peem(seed, v));
  }
  std::vector<CheckResult> out;
  for (auto& a : acc) out.push_back(a.finish());
  return out;
}

CheckResult mstep_monotonicity(std::size_t trials, std::size_t sweeps, std::uint64_t seed, double slack) {
  CheckResult r;
  r.name = "mstep_monotone";
  r.tolerance = slack;
  std::size_t violations = 0;
  // Sizes well above K: with N <= K the model can fit |X|^2 exactly and C(phi)
  // sinks to rounding level, where a relative criterion is meaningless.
  std::uniform_int_distribution<std::size_t> size(10, 40);
  std::uniform_real_distribution<double> pos(0.05, 3.0);
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = make_rng(seed, "mstep.trial." + std::to_string(t));
    const std::size_t F = size(rng), N = size(rng), K = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const Eigen::MatrixXd power = random_power(F, N, rng);
    std::vector<VarianceField> vs(std::uniform_int_distribution<int>(1, 2)(rng));
    for (auto& v : vs) v.values = random_power(F, N, rng);
    NoiseMixtureParams phi = NoiseMixtureParams::init(F, N, K, rng);
    for (Eigen::Index n = 0; n < phi.gain.size(); ++n) phi.gain(n) = pos(rng);
    double cost = mstep_cost(power, vs, phi);
    for (std::size_t s = 0; s < sweeps; ++s) {
      phi = mstep_update(std::move(phi), power, vs);
      const double next = mstep_cost(power, vs, phi);
      const double rise = (next - cost) / std::abs(cost);
      r.worst = std::max(r.worst, rise);
      if (!(next <= cost + slack * std::abs(cost))) ++violations;
      cost = next;
    }
    ++r.cases;
  }
  r.passed = violations == 0 && r.cases == trials;
  std::ostringstream os;
  os << violations << " violating sweeps of " << trials * sweeps << "; max relative increase " << r.worst;
  r.detail = os.str();
  return r;
}

CheckResult mstep_fixed_point(std::size_t trials, std::uint64_t seed, double tolerance) {
  CheckResult r;
  r.name = "mstep_fixed_point";
  r.tolerance = tolerance;
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = make_rng(seed, "mstep.fixed." + std::to_string(t));
    const std::size_t F = 1 + rng() % 20, N = 1 + rng() % 20, K = 1 + rng() % 8;
    const NoiseMixtureParams phi = NoiseMixtureParams::init(F, N, K, rng);
    const VarianceField vs{random_power(F, N, rng)};
    const Eigen::MatrixXd power = mixture_variance(vs, phi).values;
    const NoiseMixtureParams next = mstep_update(phi, power, std::span(&vs, 1));
    const auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
      return ((a - b).array().abs() / b.array().abs()).maxCoeff();
    };
    r.worst = std::max({r.worst, rel(next.basis, phi.basis), rel(next.activations, phi.activations),
                        rel(next.gain, phi.gain)});
    ++r.cases;
  }
  r.passed = r.worst <= tolerance;
  std::ostringstream os;
  os << "max relative change " << r.worst << " over " << r.cases << " trials";
  r.detail = os.str();
  return r;
}

}  // namespace rvae
