#include "rvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "rvae/errors.hpp"

namespace rvae::ad {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const std::size_t> parents, BackwardFn backward) {
  const bool needs_grad =
      std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs_grad, needs_grad ? std::move(backward) : BackwardFn{}});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (consumed_) throw ContractError("backward: tape already consumed");
  if (nodes_.at(loss.id).value.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        nodes_[loss.id].value.shape_string());
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id, n.grad);
  }
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands recorded on different tapes");
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

template <class F>
void accumulate(Tape& t, std::size_t id, F&& f) {
  if (!t.requires_grad(id)) return;
  auto g = t.grad_buffer(id).as_matrix();
  f(g);
}

Tensor like(const Tensor& t) { return Tensor::matrix(t.rows(), t.cols()); }

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t pa[] = {a.id};
  return t.record(std::move(y), pa, [ia = a.id, deriv](Tape& tp, std::size_t self, const Tensor& g) {
    if (!tp.requires_grad(ia)) return;
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.rows())
    throw DimensionError("matmul: inner dimensions differ " + x.shape_string() + " * " + w.shape_string());
  Tensor y = Tensor::matrix(x.rows(), w.cols());
  y.as_matrix().noalias() = x.as_matrix() * w.as_matrix();
  const std::size_t pa[] = {a.id, b.id};
  return t.record(std::move(y), pa, [ia = a.id, ib = b.id](Tape& tp, std::size_t, const Tensor& g) {
    const auto gm = g.as_matrix();
    accumulate(tp, ia, [&](auto ga) { ga.noalias() += gm * tp.value(ib).as_matrix().transpose(); });
    accumulate(tp, ib, [&](auto gb) { gb.noalias() += tp.value(ia).as_matrix().transpose() * gm; });
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = like(a.value());
  y.as_matrix() = a.value().as_matrix() + b.value().as_matrix();
  const std::size_t pa[] = {a.id, b.id};
  return t.record(std::move(y), pa, [ia = a.id, ib = b.id](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga += g.as_matrix(); });
    accumulate(tp, ib, [&](auto gb) { gb += g.as_matrix(); });
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = like(a.value());
  y.as_matrix() = a.value().as_matrix() - b.value().as_matrix();
  const std::size_t pa[] = {a.id, b.id};
  return t.record(std::move(y), pa, [ia = a.id, ib = b.id](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga += g.as_matrix(); });
    accumulate(tp, ib, [&](auto gb) { gb -= g.as_matrix(); });
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = like(a.value());
  y.as_matrix() = a.value().as_matrix().cwiseProduct(b.value().as_matrix());
  const std::size_t pa[] = {a.id, b.id};
  return t.record(std::move(y), pa, [ia = a.id, ib = b.id](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga += g.as_matrix().cwiseProduct(tp.value(ib).as_matrix()); });
    accumulate(tp, ib, [&](auto gb) { gb += g.as_matrix().cwiseProduct(tp.value(ia).as_matrix()); });
  });
}

Var scale(Var a, double factor) {
  Tensor y = like(a.value());
  y.as_matrix() = factor * a.value().as_matrix();
  const std::size_t pa[] = {a.id};
  return a.tape->record(std::move(y), pa, [ia = a.id, factor](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga += factor * g.as_matrix(); });
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols())
    throw DimensionError("add_bias: bias " + b.shape_string() + " does not fit " + x.shape_string());
  Tensor y = like(x);
  y.as_matrix() = x.as_matrix().rowwise() + b.as_matrix().row(0);
  const std::size_t pa[] = {a.id, bias.id};
  return t.record(std::move(y), pa, [ia = a.id, ib = bias.id](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga += g.as_matrix(); });
    accumulate(tp, ib, [&](auto gb) { gb.row(0) += g.as_matrix().colwise().sum(); });
  });
}

Var scale_rows(Var a, const Tensor& factors) {
  const Tensor& x = a.value();
  if (factors.size() != x.rows())
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                         std::to_string(x.rows()) + " rows");
  Eigen::Map<const Eigen::VectorXd> f(factors.data(), Eigen::Index(factors.size()));
  Tensor y = like(x);
  y.as_matrix() = f.asDiagonal() * x.as_matrix();
  const std::size_t pa[] = {a.id};
  return a.tape->record(std::move(y), pa, [ia = a.id, factors](Tape& tp, std::size_t, const Tensor& g) {
    Eigen::Map<const Eigen::VectorXd> fv(factors.data(), Eigen::Index(factors.size()));
    accumulate(tp, ia, [&](auto ga) { ga += fv.asDiagonal() * g.as_matrix(); });
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var exp_floor(Var a, double floor) {
  return unary(
      a, [floor](double x) { return std::max(std::exp(x), floor); },
      [floor](double x, double y) { return std::exp(x) > floor ? y : 0.0; });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_cols: operands on different tapes");
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id);
    offsets.push_back(cols);
    cols += p.cols();
  }
  Tensor y = Tensor::matrix(rows, cols);
  auto ym = y.as_matrix();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pm = parts[k].value().as_matrix();
    ym.middleCols(Eigen::Index(offsets[k]), pm.cols()) = pm;
  }
  return t.record(std::move(y), ids, [ids, offsets](Tape& tp, std::size_t, const Tensor& g) {
    const auto gm = g.as_matrix();
    for (std::size_t k = 0; k < ids.size(); ++k)
      accumulate(tp, ids[k], [&](auto gp) { gp += gm.middleCols(Eigen::Index(offsets[k]), gp.cols()); });
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.cols()) throw DimensionError("slice_cols: range out of bounds");
  Tensor y = Tensor::matrix(x.rows(), end - begin);
  y.as_matrix() = x.as_matrix().middleCols(Eigen::Index(begin), Eigen::Index(end - begin));
  const std::size_t pa[] = {a.id};
  return a.tape->record(std::move(y), pa, [ia = a.id, begin](Tape& tp, std::size_t, const Tensor& g) {
    accumulate(tp, ia, [&](auto ga) { ga.middleCols(Eigen::Index(begin), Eigen::Index(g.cols())) += g.as_matrix(); });
  });
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("stack_rows: no operands");
  Tape& t = *parts.front().tape;
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("stack_rows: operands on different tapes");
    if (p.cols() != cols) throw DimensionError("stack_rows: column counts differ");
    ids.push_back(p.id);
    offsets.push_back(rows);
    rows += p.rows();
  }
  Tensor y = Tensor::matrix(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    std::copy(pv.data(), pv.data() + pv.size(), y.data() + offsets[k] * cols);
  }
  return t.record(std::move(y), ids, [ids, offsets, cols](Tape& tp, std::size_t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor& gp = tp.grad_buffer(ids[k]);
      const double* src = g.data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t cols = x.cols();
  Tensor y = Tensor::matrix(end - begin, cols);
  std::copy(x.data() + begin * cols, x.data() + end * cols, y.data());
  const std::size_t pa[] = {a.id};
  return a.tape->record(std::move(y), pa, [ia = a.id, begin, cols](Tape& tp, std::size_t, const Tensor& g) {
    if (!tp.requires_grad(ia)) return;
    double* dst = tp.grad_buffer(ia).data() + begin * cols;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var blend_rows(Var fresh, Var previous, const Tensor& mask) {
  Tape& t = same_tape(fresh, previous);
  require_same_shape(fresh.value(), previous.value(), "blend_rows");
  if (mask.size() != fresh.rows()) throw DimensionError("blend_rows: mask length differs from row count");
  Eigen::Map<const Eigen::VectorXd> m(mask.data(), Eigen::Index(mask.size()));
  Tensor y = like(fresh.value());
  y.as_matrix() = m.asDiagonal() * fresh.value().as_matrix() +
                  (1.0 - m.array()).matrix().asDiagonal() * previous.value().as_matrix();
  const std::size_t pa[] = {fresh.id, previous.id};
  return t.record(std::move(y), pa, [ia = fresh.id, ib = previous.id, mask](Tape& tp, std::size_t, const Tensor& g) {
    Eigen::Map<const Eigen::VectorXd> mv(mask.data(), Eigen::Index(mask.size()));
    accumulate(tp, ia, [&](auto ga) { ga += mv.asDiagonal() * g.as_matrix(); });
    accumulate(tp, ib, [&](auto gb) { gb += (1.0 - mv.array()).matrix().asDiagonal() * g.as_matrix(); });
  });
}

Var sum(Var a) {
  const std::size_t pa[] = {a.id};
  return a.tape->record(Tensor::scalar(a.value().as_matrix().sum()), pa,
                        [ia = a.id](Tape& tp, std::size_t, const Tensor& g) {
                          accumulate(tp, ia, [&](auto ga) { ga.array() += g[0]; });
                        });
}

Var weighted_sum(Var a, const Tensor& row_weights) {
  const Tensor& x = a.value();
  if (row_weights.size() != x.rows()) throw DimensionError("weighted_sum: weight count differs from row count");
  Eigen::Map<const Eigen::VectorXd> w(row_weights.data(), Eigen::Index(row_weights.size()));
  const double value = (w.transpose() * x.as_matrix()).sum();
  const std::size_t pa[] = {a.id};
  return a.tape->record(Tensor::scalar(value), pa, [ia = a.id, row_weights](Tape& tp, std::size_t, const Tensor& g) {
    Eigen::Map<const Eigen::VectorXd> wv(row_weights.data(), Eigen::Index(row_weights.size()));
    accumulate(tp, ia, [&](auto ga) { ga.colwise() += g[0] * wv; });
  });
}

Var is_divergence_sum(Var variance, const Tensor& power, const Tensor& row_weights) {
  const Tensor& v = variance.value();
  require_same_shape(v, power, "is_divergence_sum");
  if (row_weights.size() != v.rows()) throw DimensionError("is_divergence_sum: weight count differs from row count");
  const std::size_t cols = v.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const double w = row_weights[r];
    if (w == 0.0) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double a = power[r * cols + c];
      const double b = v[r * cols + c];
      acc += a / b - std::log(std::max(a, kPowerFloor) / b) - 1.0;
    }
    total += w * acc;
  }
  const std::size_t pa[] = {variance.id};
  return variance.tape->record(
      Tensor::scalar(total), pa, [iv = variance.id, power, row_weights](Tape& tp, std::size_t, const Tensor& g) {
        if (!tp.requires_grad(iv)) return;
        const Tensor& vv = tp.value(iv);
        Tensor& gv = tp.grad_buffer(iv);
        const std::size_t c = vv.cols();
        for (std::size_t r = 0; r < vv.rows(); ++r) {
          const double w = g[0] * row_weights[r];
          if (w == 0.0) continue;
          for (std::size_t k = r * c; k < (r + 1) * c; ++k) {
            const double inv = 1.0 / vv[k];
            gv[k] += w * (inv - power[k] * inv * inv);
          }
        }
      });
}

Var gaussian_kl_sum(Var mean, Var variance, const Tensor& row_weights) {
  Tape& t = same_tape(mean, variance);
  const Tensor& mu = mean.value();
  const Tensor& v = variance.value();
  require_same_shape(mu, v, "gaussian_kl_sum");
  if (row_weights.size() != v.rows()) throw DimensionError("gaussian_kl_sum: weight count differs from row count");
  const std::size_t cols = v.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t k = r * cols; k < (r + 1) * cols; ++k) acc += mu[k] * mu[k] + v[k] - std::log(v[k]) - 1.0;
    total += 0.5 * row_weights[r] * acc;
  }
  const std::size_t pa[] = {mean.id, variance.id};
  return t.record(Tensor::scalar(total), pa,
                  [im = mean.id, iv = variance.id, row_weights](Tape& tp, std::size_t, const Tensor& g) {
                    const Tensor& muv = tp.value(im);
                    const Tensor& vv = tp.value(iv);
                    const std::size_t c = vv.cols();
                    if (tp.requires_grad(im)) {
                      Tensor& gm = tp.grad_buffer(im);
                      for (std::size_t r = 0; r < vv.rows(); ++r)
                        for (std::size_t k = r * c; k < (r + 1) * c; ++k) gm[k] += g[0] * row_weights[r] * muv[k];
                    }
                    if (tp.requires_grad(iv)) {
                      Tensor& gv = tp.grad_buffer(iv);
                      for (std::size_t r = 0; r < vv.rows(); ++r)
                        for (std::size_t k = r * c; k < (r + 1) * c; ++k)
                          gv[k] += g[0] * row_weights[r] * 0.5 * (1.0 - 1.0 / vv[k]);
                    }
                  });
}

Var lstm_cell(Var gates_x, Var state, Var w_hh) {
  Tape& t = same_tape(gates_x, state);
  if (w_hh.tape != &t) throw ContractError("lstm_cell: weights on a different tape");
  const Tensor& gx = gates_x.value();
  const Tensor& st = state.value();
  const Tensor& w = w_hh.value();
  const std::size_t batch = gx.rows();
  const std::size_t hidden = w.rows();
  if (w.cols() != 4 * hidden || gx.cols() != 4 * hidden || st.cols() != 2 * hidden || st.rows() != batch)
    throw DimensionError("lstm_cell: inconsistent shapes gates_x " + gx.shape_string() + ", state " +
                         st.shape_string() + ", w_hh " + w.shape_string());
  const auto stm = st.as_matrix();
  Tensor act = Tensor::matrix(batch, 4 * hidden);
  act.as_matrix().noalias() = gx.as_matrix() + stm.leftCols(Eigen::Index(hidden)) * w.as_matrix();
  Tensor tanh_c = Tensor::matrix(batch, hidden);
  Tensor out = Tensor::matrix(batch, 2 * hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    double* a = act.data() + b * 4 * hidden;
    const double* c_prev = st.data() + b * 2 * hidden + hidden;
    double* h = out.data() + b * 2 * hidden;
    double* c = h + hidden;
    double* tc = tanh_c.data() + b * hidden;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double ig = 1.0 / (1.0 + std::exp(-a[j]));
      const double fg = 1.0 / (1.0 + std::exp(-a[hidden + j]));
      const double cg = std::tanh(a[2 * hidden + j]);
      const double og = 1.0 / (1.0 + std::exp(-a[3 * hidden + j]));
      a[j] = ig;
      a[hidden + j] = fg;
      a[2 * hidden + j] = cg;
      a[3 * hidden + j] = og;
      c[j] = fg * c_prev[j] + ig * cg;
      tc[j] = std::tanh(c[j]);
      h[j] = og * tc[j];
    }
  }
  const std::size_t pa[] = {gates_x.id, state.id, w_hh.id};
  return t.record(
      std::move(out), pa,
      [igx = gates_x.id, ist = state.id, iw = w_hh.id, act = std::move(act), tanh_c = std::move(tanh_c), batch,
       hidden](Tape& tp, std::size_t, const Tensor& g) {
        const Tensor& stv = tp.value(ist);
        Tensor da = Tensor::matrix(batch, 4 * hidden);
        Tensor dstate = Tensor::matrix(batch, 2 * hidden);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* a = act.data() + b * 4 * hidden;
          const double* tc = tanh_c.data() + b * hidden;
          const double* c_prev = stv.data() + b * 2 * hidden + hidden;
          const double* dh = g.data() + b * 2 * hidden;
          const double* dc_up = dh + hidden;
          double* d = da.data() + b * 4 * hidden;
          double* dc_prev = dstate.data() + b * 2 * hidden + hidden;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double ig = a[j], fg = a[hidden + j], cg = a[2 * hidden + j], og = a[3 * hidden + j];
            const double dc = dc_up[j] + dh[j] * og * (1.0 - tc[j] * tc[j]);
            d[j] = dc * cg * ig * (1.0 - ig);
            d[hidden + j] = dc * c_prev[j] * fg * (1.0 - fg);
            d[2 * hidden + j] = dc * ig * (1.0 - cg * cg);
            d[3 * hidden + j] = dh[j] * tc[j] * og * (1.0 - og);
            dc_prev[j] = dc * fg;
          }
        }
        const auto dam = da.as_matrix();
        accumulate(tp, igx, [&](auto ggx) { ggx += dam; });
        accumulate(tp, iw, [&](auto gw) {
          gw.noalias() += tp.value(ist).as_matrix().leftCols(Eigen::Index(hidden)).transpose() * dam;
        });
        if (tp.requires_grad(ist)) {
          dstate.as_matrix().leftCols(Eigen::Index(hidden)).noalias() = dam * tp.value(iw).as_matrix().transpose();
          tp.grad_buffer(ist).as_matrix() += dstate.as_matrix();
        }
      });
}

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 4 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
}

}  // namespace rvae::ad
