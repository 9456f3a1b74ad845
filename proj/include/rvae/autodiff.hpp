#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rvae/tensor.hpp"

namespace rvae::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children and a single reverse sweep visits each node once.
///
/// A node only keeps its backward closure when at least one parent requires a
/// gradient; everything downstream of constants alone is folded away.
class Tape {
 public:
  /// Called with the node's own id and the gradient of the loss w.r.t. it;
  /// must accumulate into the parents' grad buffers.
  using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  Var record(Tensor value, std::span<const std::size_t> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Accumulation buffer for a node's gradient (zero-initialised on first use).
  Tensor& grad_buffer(std::size_t id);

  /// Gradient of the last backward() loss. Zeros if the node was unreached.
  Tensor grad(Var v) const;

  /// Runs the reverse sweep from a 1x1 loss. Can be called once per tape.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- elementwise / linear algebra -------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a (R x C) + bias (1 x C) broadcast over rows.
Var add_bias(Var a, Var bias);
/// Row r of `a` multiplied by factors[r]; factors is a constant R x 1 tensor.
Var scale_rows(Var a, const Tensor& factors);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
/// max(exp(a), floor); the gradient is zero where the floor is active.
Var exp_floor(Var a, double floor);

// ---- structural ------------------------------------------------------------------

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var stack_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// mask[r] * fresh[r,:] + (1 - mask[r]) * previous[r,:]; mask is R x 1 constant.
Var blend_rows(Var fresh, Var previous, const Tensor& mask);

// ---- reductions ------------------------------------------------------------------

Var sum(Var a);
/// sum_{r,c} weights[r] * a[r,c]
Var weighted_sum(Var a, const Tensor& row_weights);

/// sum_{r,c} w[r] * d_IS(power[r,c], v[r,c]), d_IS(a,b) = a/b - ln(a/b) - 1.
/// Power entries are floored at kPowerFloor inside the logarithm only.
Var is_divergence_sum(Var variance, const Tensor& power, const Tensor& row_weights);

/// 0.5 * sum_{r,c} w[r] * (mu^2 + v - ln v - 1), the KL of N(mu, v) to N(0, 1).
Var gaussian_kl_sum(Var mean, Var variance, const Tensor& row_weights);

/// One LSTM step with gate order (input, forget, cell, output).
/// `gates_x` = x W_ih + b (B x 4H), `state` = [h | c] (B x 2H), w_hh is H x 4H.
/// Returns the new [h | c].
Var lstm_cell(Var gates_x, Var state, Var w_hh);

inline constexpr double kPowerFloor = 1e-20;

/// Raises glibc's mmap and trim thresholds so the large per-step tape buffers
/// are recycled by malloc instead of being mapped and unmapped every step.
/// No effect on other C libraries. Call once at program start.
void tune_allocator();

}  // namespace rvae::ad
