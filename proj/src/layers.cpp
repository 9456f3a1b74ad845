#include "rvae/layers.hpp"

#include <cmath>

#include "rvae/adam.hpp"
#include "rvae/errors.hpp"

namespace rvae {

Bindings::Bindings(ad::Tape& tape, const ParamSet& params, bool requires_grad) : tape_(&tape) {
  for (const auto& [name, value] : params)
    vars_.emplace(name, requires_grad ? tape.variable(value) : tape.constant(value));
}

ad::Var Bindings::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter tensor '" + name + "'");
  return it->second;
}

ParamSet Bindings::gradients() const {
  ParamSet out;
  for (const auto& [name, var] : vars_) out.emplace(name, tape_->grad(var));
  return out;
}

LstmWeights LstmWeights::bind(const Bindings& b, const std::string& prefix) {
  return {b.at(prefix + ".W_ih"), b.at(prefix + ".W_hh"), b.at(prefix + ".b")};
}

namespace layers {

ad::Var dense(ad::Var x, ad::Var weights, ad::Var bias) { return ad::add_bias(ad::matmul(x, weights), bias); }

ad::Var zero_state(ad::Tape& tape, std::size_t batch, std::size_t hidden) {
  return tape.constant(Tensor::matrix(batch, 2 * hidden));
}

ad::Var lstm_step(ad::Var input, ad::Var state, const LstmWeights& w) {
  return ad::lstm_cell(dense(input, w.w_ih, w.bias), state, w.w_hh);
}

std::vector<ad::Var> lstm(ad::Var stacked_input, std::size_t batch, const LstmWeights& w, Direction dir,
                          const Tensor* step_mask) {
  const std::size_t rows = stacked_input.rows();
  if (batch == 0 || rows % batch != 0)
    throw DimensionError("lstm: " + std::to_string(rows) + " input rows not divisible by batch " +
                         std::to_string(batch));
  const std::size_t frames = rows / batch;
  if (step_mask && step_mask->size() != rows) throw DimensionError("lstm: mask size differs from N*B");
  if (!stacked_input.value().all_finite()) throw NumericError("lstm: non-finite input sequence");
  const std::size_t hidden = w.hidden();
  ad::Tape& tape = *stacked_input.tape;

  const ad::Var gates_x = dense(stacked_input, w.w_ih, w.bias);
  ad::Var state = zero_state(tape, batch, hidden);
  std::vector<ad::Var> out(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t n = dir == Direction::forward ? k : frames - 1 - k;
    ad::Var next = ad::lstm_cell(ad::slice_rows(gates_x, n * batch, (n + 1) * batch), state, w.w_hh);
    if (step_mask) {
      Tensor m = Tensor::matrix(batch, 1);
      bool all_valid = true;
      for (std::size_t b = 0; b < batch; ++b) {
        m[b] = (*step_mask)[n * batch + b];
        all_valid = all_valid && m[b] == 1.0;
      }
      if (!all_valid) next = ad::blend_rows(next, state, m);
    }
    state = next;
    out[n] = hidden_of(state, hidden);
  }
  return out;
}

}  // namespace layers

void init_dense(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w = Tensor::matrix(in, out);
  for (double& x : w.values()) x = u(rng);
  params[prefix + ".W"] = std::move(w);
  params[prefix + ".b"] = Tensor::matrix(1, out);
}

void init_lstm(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::mt19937_64& rng) {
  const double limit = 1.0 / std::sqrt(double(hidden));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w_ih = Tensor::matrix(in, 4 * hidden);
  Tensor w_hh = Tensor::matrix(hidden, 4 * hidden);
  for (double& x : w_ih.values()) x = u(rng);
  for (double& x : w_hh.values()) x = u(rng);
  Tensor b = Tensor::matrix(1, 4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  params[prefix + ".W_ih"] = std::move(w_ih);
  params[prefix + ".W_hh"] = std::move(w_hh);
  params[prefix + ".b"] = std::move(b);
}

Tensor forward_dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  ad::Tape tape;
  const ad::Var y = layers::dense(tape.constant(input.reshaped({input.rows(), input.cols()})),
                                  tape.constant(weights), tape.constant(bias.reshaped({1, bias.size()})));
  return y.value();
}

Tensor forward_lstm(const Tensor& sequence, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                    Direction dir) {
  if (sequence.rank() != 3) throw DimensionError("forward_lstm: expected N x B x D, got " + sequence.shape_string());
  const std::size_t frames = sequence.shape()[0], batch = sequence.shape()[1];
  ad::Tape tape;
  const LstmWeights w{tape.constant(w_ih), tape.constant(w_hh), tape.constant(bias.reshaped({1, bias.size()}))};
  const auto steps =
      layers::lstm(tape.constant(sequence.reshaped({frames * batch, sequence.shape()[2]})), batch, w, dir);
  const std::size_t hidden = w.hidden();
  Tensor out({frames, batch, hidden});
  for (std::size_t n = 0; n < frames; ++n) {
    const Tensor& h = steps[n].value();
    std::copy(h.data(), h.data() + h.size(), out.data() + n * batch * hidden);
  }
  return out;
}

double global_norm(const ParamSet& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.values()) sq += x * x;
  return std::sqrt(sq);
}

double clip_global_norm(ParamSet& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.values()) x *= f;
  }
  return norm;
}

void AdamState::minimize(ParamSet& params, const ParamSet& grads) { step(params, grads, -1.0); }
void AdamState::maximize(ParamSet& params, const ParamSet& grads) { step(params, grads, +1.0); }

void AdamState::step(ParamSet& params, const ParamSet& grads, double sign) {
  ++steps_;
  const double t = double(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) continue;
    Tensor& p = it->second;
    if (!p.same_shape(g)) throw DimensionError("adam: gradient shape differs for '" + name + "'");
    auto [mi, fresh_m] = first_.try_emplace(name, Tensor(p.shape(), 0.0));
    auto [vi, fresh_v] = second_.try_emplace(name, Tensor(p.shape(), 0.0));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] += sign * config_.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

}  // namespace rvae
