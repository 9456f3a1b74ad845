#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rvae/autodiff.hpp"
#include "rvae/tensor.hpp"

namespace rvae {

/// Named parameter tensors. std::map keeps a stable (sorted) order, which is
/// also the serialization order of checkpoints.
using ParamSet = std::map<std::string, Tensor>;

/// Parameters of a ParamSet registered on a tape.
class Bindings {
 public:
  Bindings(ad::Tape& tape, const ParamSet& params, bool requires_grad);

  ad::Var at(const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  /// Gradients of every bound parameter after tape.backward().
  ParamSet gradients() const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

enum class Direction { forward, backward };

struct LstmWeights {
  ad::Var w_ih;  // D x 4H
  ad::Var w_hh;  // H x 4H
  ad::Var bias;  // 1 x 4H
  std::size_t hidden() const { return w_hh.rows(); }

  static LstmWeights bind(const Bindings& b, const std::string& prefix);
};

namespace layers {

ad::Var dense(ad::Var x, ad::Var weights, ad::Var bias);

/// Runs an LSTM over a time-major stacked input ((N*B) x D, row n*B+b is frame
/// n of sequence b). Returns the N per-frame hidden states (B x H each) in
/// input order regardless of direction. Hidden and cell states start at zero.
///
/// When `step_mask` (N x B, 1 = valid) is given, the state is carried through
/// masked frames unchanged, so trailing padding never leaks into a backward
/// pass over the valid frames.
std::vector<ad::Var> lstm(ad::Var stacked_input, std::size_t batch, const LstmWeights& w, Direction dir,
                          const Tensor* step_mask = nullptr);

/// Zero [h | c] state for `batch` rows.
ad::Var zero_state(ad::Tape& tape, std::size_t batch, std::size_t hidden);

/// One step of a causal LSTM used for recursive (sample-dependent) inputs.
ad::Var lstm_step(ad::Var input, ad::Var state, const LstmWeights& w);

inline ad::Var hidden_of(ad::Var state, std::size_t hidden) { return ad::slice_cols(state, 0, hidden); }

}  // namespace layers

// ---- parameter initialisation -------------------------------------------------------

/// Glorot-uniform D_in x D_out weights and a zero 1 x D_out bias.
void init_dense(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng);
/// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1.
void init_lstm(ParamSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
               std::mt19937_64& rng);

// ---- tensor-level entry points (build a private tape) ----------------------------

/// input B x D_in, weights D_in x D_out, bias 1 x D_out (or length D_out).
Tensor forward_dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// sequence N x B x D -> N x B x H. Weights as in LstmWeights.
Tensor forward_lstm(const Tensor& sequence, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias,
                    Direction dir);

double global_norm(const ParamSet& grads);
/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(ParamSet& grads, double max_norm);

}  // namespace rvae
