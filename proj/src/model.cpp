#include "rvae/model.hpp"

#include <cmath>
#include <numbers>

#include "rvae/errors.hpp"

namespace rvae {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ffnn: return "ffnn";
    case Variant::rnn: return "rnn";
    case Variant::brnn: return "brnn";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "ffnn" || name == "FFNN") return Variant::ffnn;
  if (name == "rnn" || name == "RNN") return Variant::rnn;
  if (name == "brnn" || name == "BRNN") return Variant::brnn;
  throw ConfigError("unknown model variant '" + std::string(name) + "' (expected ffnn, rnn or brnn)");
}

namespace {

void check_dims(const ModelDims& d) {
  if (d.latent == 0 || d.freqs == 0 || d.hidden == 0) throw ConfigError("model dimensions must be positive");
}

void check_against(const ParamSet& actual, const ParamSet& expected, const char* what) {
  for (const auto& [name, ref] : expected) {
    auto it = actual.find(name);
    if (it == actual.end()) throw ConfigError(std::string(what) + ": missing tensor '" + name + "'");
    if (it->second.shape() != ref.shape())
      throw ConfigError(std::string(what) + ": tensor '" + name + "' has shape " + it->second.shape_string() +
                        ", expected " + ref.shape_string());
  }
  for (const auto& [name, t] : actual)
    if (!expected.contains(name)) throw ConfigError(std::string(what) + ": unexpected tensor '" + name + "'");
}

ad::Var head(const Bindings& b, const std::string& prefix, ad::Var x) {
  return layers::dense(x, b.at(prefix + ".W"), b.at(prefix + ".b"));
}

}  // namespace

// ---- decoder ------------------------------------------------------------------------

DecoderParams DecoderParams::init(Variant variant, ModelDims dims, std::mt19937_64& rng) {
  check_dims(dims);
  DecoderParams p{variant, dims, {}};
  const std::size_t h = dims.hidden;
  init_dense(p.tensors, "dec.in", dims.latent, h, rng);
  if (variant != Variant::ffnn) init_lstm(p.tensors, "dec.lstm_fw", h, h, rng);
  if (variant == Variant::brnn) {
    init_lstm(p.tensors, "dec.lstm_bw", h, h, rng);
    init_dense(p.tensors, "dec.merge", 2 * h, h, rng);
  }
  init_dense(p.tensors, "dec.out", h, dims.freqs, rng);
  return p;
}

void DecoderParams::validate() const {
  std::mt19937_64 scratch(0);
  check_against(tensors, init(variant, dims, scratch).tensors, "decoder");
}

ad::Var decode_on_tape(const DecoderParams& params, const Bindings& b, ad::Var z, std::size_t batch,
                       const Tensor* step_mask) {
  if (z.cols() != params.dims.latent)
    throw ConfigError("decode: latent input has " + std::to_string(z.cols()) + " columns, decoder expects L=" +
                      std::to_string(params.dims.latent));
  ad::Var h = ad::tanh(head(b, "dec.in", z));
  if (params.variant == Variant::rnn) {
    const auto steps = layers::lstm(h, batch, LstmWeights::bind(b, "dec.lstm_fw"), Direction::forward, step_mask);
    h = ad::stack_rows(steps);
  } else if (params.variant == Variant::brnn) {
    const auto fw = layers::lstm(h, batch, LstmWeights::bind(b, "dec.lstm_fw"), Direction::forward, step_mask);
    const auto bw = layers::lstm(h, batch, LstmWeights::bind(b, "dec.lstm_bw"), Direction::backward, step_mask);
    const ad::Var both[] = {ad::stack_rows(fw), ad::stack_rows(bw)};
    h = ad::tanh(head(b, "dec.merge", ad::concat_cols(both)));
  }
  return ad::exp_floor(head(b, "dec.out", h), kVarianceFloor);
}

VarianceField decode(const DecoderParams& params, const LatentSequence& z) {
  ad::Tape tape;
  const Bindings b(tape, params.tensors, false);
  const ad::Var v = decode_on_tape(params, b, tape.constant(z.values.reshaped({z.frames(), z.dim()})), 1);
  return {v.value().as_matrix().transpose()};
}

Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& x : t.values()) x = normal(rng);
  return t;
}

LatentSequence sample_prior(std::size_t frames, std::size_t latent, std::mt19937_64& rng) {
  return {standard_normal(frames, latent, rng)};
}

double log_likelihood(const Eigen::MatrixXd& power, const VarianceField& v) {
  if (power.rows() != v.values.rows() || power.cols() != v.values.cols())
    throw DimensionError("log_likelihood: spectrogram and variance shapes differ");
  double total = 0.0;
  for (Eigen::Index n = 0; n < power.cols(); ++n)
    for (Eigen::Index f = 0; f < power.rows(); ++f) {
      const double var = v.values(f, n);
      if (!(var > 0.0)) throw ContractError("log_likelihood: nonpositive variance");
      total += -std::log(std::numbers::pi) - std::log(var) - power(f, n) / var;
    }
  return total;
}

double log_likelihood(const ComplexSpectrogram& spec, const VarianceField& v) {
  return log_likelihood(spec.power(), v);
}

// ---- encoder ------------------------------------------------------------------------

EncoderParams EncoderParams::init(Variant variant, ModelDims dims, std::mt19937_64& rng) {
  check_dims(dims);
  EncoderParams p{variant, dims, {}};
  const std::size_t h = dims.hidden;
  if (variant == Variant::ffnn) {
    init_dense(p.tensors, "enc.in", dims.freqs, h, rng);
  } else {
    if (variant == Variant::brnn) init_lstm(p.tensors, "enc.obs_fw", dims.freqs, h, rng);
    init_lstm(p.tensors, "enc.obs_bw", dims.freqs, h, rng);
    init_lstm(p.tensors, "enc.pred", dims.latent, h, rng);
    const std::size_t obs = variant == Variant::brnn ? 2 * h : h;
    init_dense(p.tensors, "enc.upd", h + obs, h, rng);
  }
  init_dense(p.tensors, "enc.mu", h, dims.latent, rng);
  init_dense(p.tensors, "enc.logvar", h, dims.latent, rng);
  return p;
}

void EncoderParams::validate() const {
  std::mt19937_64 scratch(0);
  check_against(tensors, init(variant, dims, scratch).tensors, "encoder");
}

Tensor encoder_features(const Eigen::MatrixXd& power) {
  Tensor out = Tensor::matrix(std::size_t(power.cols()), std::size_t(power.rows()));
  out.as_matrix() = power.transpose().array().log1p().matrix();
  return out;
}

EncoderPass encode_on_tape(const EncoderParams& params, const Bindings& b, ad::Var features, std::size_t batch,
                           const Tensor& eps, const Tensor* step_mask, const Tensor* forced_z) {
  const ModelDims& d = params.dims;
  if (features.cols() != d.freqs)
    throw ConfigError("encode: features have " + std::to_string(features.cols()) + " bins, encoder expects F=" +
                      std::to_string(d.freqs));
  const std::size_t rows = features.rows();
  if (batch == 0 || rows % batch != 0) throw DimensionError("encode: feature rows not divisible by batch");
  if (eps.rows() != rows || eps.cols() != d.latent) throw DimensionError("encode: eps must be (N*B) x L");
  if (forced_z && (forced_z->rows() != rows || forced_z->cols() != d.latent))
    throw DimensionError("encode: forced latents must be (N*B) x L");
  ad::Tape& tape = b.tape();

  if (params.variant == Variant::ffnn) {
    const ad::Var u = ad::tanh(head(b, "enc.in", features));
    const ad::Var mean = head(b, "enc.mu", u);
    const ad::Var var = ad::exp_floor(head(b, "enc.logvar", u), kVarianceFloor);
    const ad::Var z = ad::add(mean, ad::mul(ad::sqrt(var), tape.constant(eps)));
    return {z, mean, var};
  }

  const std::size_t frames = rows / batch;
  const std::size_t h = d.hidden;
  ad::Var observed;
  if (params.variant == Variant::rnn) {
    observed = ad::stack_rows(
        layers::lstm(features, batch, LstmWeights::bind(b, "enc.obs_bw"), Direction::backward, step_mask));
  } else {
    const auto fw = layers::lstm(features, batch, LstmWeights::bind(b, "enc.obs_fw"), Direction::forward, step_mask);
    const auto bw =
        layers::lstm(features, batch, LstmWeights::bind(b, "enc.obs_bw"), Direction::backward, step_mask);
    const ad::Var both[] = {ad::stack_rows(fw), ad::stack_rows(bw)};
    observed = ad::concat_cols(both);
  }

  // Update block dense layer on [h_pred | h_obs]; the observation half is
  // projected for all frames at once.
  const ad::Var w_upd = b.at("enc.upd.W");
  const ad::Var w_pred = ad::slice_rows(w_upd, 0, h);
  const ad::Var w_obs = ad::slice_rows(w_upd, h, w_upd.rows());
  const ad::Var obs_proj = ad::add_bias(ad::matmul(observed, w_obs), b.at("enc.upd.b"));
  const LstmWeights pred = LstmWeights::bind(b, "enc.pred");
  const ad::Var w_mu = b.at("enc.mu.W"), b_mu = b.at("enc.mu.b");
  const ad::Var w_lv = b.at("enc.logvar.W"), b_lv = b.at("enc.logvar.b");

  ad::Var state = layers::zero_state(tape, batch, h);
  std::vector<ad::Var> zs(frames), means(frames), vars(frames);
  for (std::size_t n = 0; n < frames; ++n) {
    ad::Var pre = ad::slice_rows(obs_proj, n * batch, (n + 1) * batch);
    if (n > 0) {
      ad::Var input;
      if (forced_z) {
        Tensor zin = Tensor::matrix(batch, d.latent);
        std::copy(forced_z->data() + (n - 1) * batch * d.latent, forced_z->data() + n * batch * d.latent,
                  zin.data());
        input = tape.constant(std::move(zin));
      } else {
        input = zs[n - 1];
      }
      state = layers::lstm_step(input, state, pred);
      pre = ad::add(pre, ad::matmul(layers::hidden_of(state, h), w_pred));
    }
    const ad::Var u = ad::tanh(pre);
    means[n] = layers::dense(u, w_mu, b_mu);
    vars[n] = ad::exp_floor(layers::dense(u, w_lv, b_lv), kVarianceFloor);
    Tensor e = Tensor::matrix(batch, d.latent);
    std::copy(eps.data() + n * batch * d.latent, eps.data() + (n + 1) * batch * d.latent, e.data());
    zs[n] = ad::add(means[n], ad::mul(ad::sqrt(vars[n]), tape.constant(std::move(e))));
  }
  return {ad::stack_rows(zs), ad::stack_rows(means), ad::stack_rows(vars)};
}

std::pair<Tensor, Tensor> encode_step(const EncoderParams& params, const Tensor& z_past,
                                      const ComplexSpectrogram& spec, std::size_t n) {
  const Eigen::MatrixXd power = spec.power();
  const std::size_t frames = std::size_t(power.cols());
  const std::size_t latent = params.dims.latent;
  if (n >= frames)
    throw ContractError("encode_step: frame " + std::to_string(n) + " out of range (N=" + std::to_string(frames) +
                        ")");
  if (n > 0 && (z_past.rows() < n || z_past.cols() != latent))
    throw ContractError("encode_step: z_past must hold at least n rows of L latents");
  Tensor forced = Tensor::matrix(frames, latent);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t l = 0; l < latent; ++l) forced(r, l) = z_past(r, l);
  ad::Tape tape;
  const Bindings b(tape, params.tensors, false);
  const auto pass = encode_on_tape(params, b, tape.constant(encoder_features(power)), 1,
                                   Tensor::matrix(frames, latent), nullptr, &forced);
  Tensor mean = Tensor::matrix(1, latent), var = Tensor::matrix(1, latent);
  for (std::size_t l = 0; l < latent; ++l) {
    mean[l] = pass.mean.value()(n, l);
    var[l] = pass.var.value()(n, l);
  }
  return {mean, var};
}

namespace {

std::pair<LatentSequence, PosteriorParams> run_encoder(const EncoderParams& params, const Eigen::MatrixXd& power,
                                                       const Tensor& eps, bool reparameterized) {
  if (!power.allFinite()) throw NumericError("sample_posterior: non-finite spectrogram");
  ad::Tape tape;
  const Bindings b(tape, params.tensors, reparameterized);
  const auto pass = encode_on_tape(params, b, tape.constant(encoder_features(power)), 1, eps);
  return {LatentSequence{pass.z.value()}, PosteriorParams{pass.mean.value(), pass.var.value()}};
}

}  // namespace

std::pair<LatentSequence, PosteriorParams> sample_posterior(const EncoderParams& params,
                                                            const Eigen::MatrixXd& power, std::mt19937_64& rng,
                                                            bool reparameterized) {
  const Tensor eps = standard_normal(std::size_t(power.cols()), params.dims.latent, rng);
  return run_encoder(params, power, eps, reparameterized);
}

std::pair<LatentSequence, PosteriorParams> sample_posterior(const EncoderParams& params,
                                                            const ComplexSpectrogram& spec, std::mt19937_64& rng,
                                                            bool reparameterized) {
  return sample_posterior(params, spec.power(), rng, reparameterized);
}

LatentSequence posterior_mean(const EncoderParams& params, const Eigen::MatrixXd& power) {
  return run_encoder(params, power, Tensor::matrix(std::size_t(power.cols()), params.dims.latent), false).first;
}

double kl_to_prior(const PosteriorParams& post) {
  if (!post.mean.same_shape(post.var)) throw DimensionError("kl_to_prior: mean and variance shapes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < post.var.size(); ++i) {
    const double v = post.var[i];
    if (!(v > 0.0)) throw ContractError("kl_to_prior: nonpositive variance");
    total += 0.5 * (post.mean[i] * post.mean[i] + v - std::log(v) - 1.0);
  }
  return total;
}

}  // namespace rvae
