#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/tensor.hpp"

namespace m2gnn {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Scale,
  Tanh,
  LogSigmoid,
  Softmax,
  Squash,
  MeanRows,
  Sum,
  Pow,
  ConcatRows,
  SpMM,
  GatherRows,
  RowsDot,
  SumSquares,
};

inline constexpr double kSquashEpsilon = 1e-12;

// Reverse-mode differentiation over the fixed primitive set used by the model.
// Nodes are appended in evaluation order, so the record is topological by
// construction. Parameters reference caller-owned tensors; their gradients are
// accumulated straight into a caller-owned sink during backward().
class Tape {
 public:
  Var constant(Tensor value) { return push(Op::Constant, std::move(value), {}, false, {}); }

  Var parameter(const Tensor& value, Tensor* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value)) throw ContractError("gradient sink has wrong shape");
    Node n;
    n.op = Op::Parameter;
    n.external = &value;
    n.sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const { return node(v).op; }
  const std::vector<std::size_t>& inputs(Var v) const { return node(v).inputs; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  const Tensor& value(Var v) const {
    const auto& n = node(v);
    return n.external ? *n.external : n.value;
  }

  // Gradient of the last backward() loss w.r.t. v; null when v received none.
  const Tensor* grad(Var v) const {
    const auto& n = node(v);
    if (n.sink) return n.sink;
    return n.grad.empty() && n.value.size() != 0 ? nullptr : &n.grad;
  }

  void backward(Var loss) {
    const auto& l = value(loss);
    if (l.rows() != 1 || l.cols() != 1) throw ContractError("backward needs a scalar loss, got " + l.shape_string());
    if (!node(loss).requires_grad) return;
    if (Tensor* g = grad_target(loss.id)) (*g)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    Tensor out = m2gnn::matmul(value(a), value(b), ta, tb);
    return push(Op::MatMul, std::move(out), {a.id, b.id}, any_grad(a, b),
                [ta, tb](Tape& t, std::size_t self) {
                  const auto& in = t.nodes_[self].inputs;
                  const Tensor& g = t.nodes_[self].grad;
                  const Tensor& A = t.value({in[0]});
                  const Tensor& B = t.value({in[1]});
                  if (Tensor* ga = t.grad_target(in[0])) {
                    if (!ta) gemm_accumulate(*ga, g, false, B, !tb);
                    else gemm_accumulate(*ga, B, tb, g, true);
                  }
                  if (Tensor* gb = t.grad_target(in[1])) {
                    if (!tb) gemm_accumulate(*gb, A, !ta, g, false);
                    else gemm_accumulate(*gb, g, true, A, ta);
                  }
                });
  }

  Var add(Var a, Var b) { return add_sub(a, b, 1.0, Op::Add); }
  Var sub(Var a, Var b) { return add_sub(a, b, -1.0, Op::Sub); }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (auto& x : out.data()) x *= c;
    return push(Op::Scale, std::move(out), {a.id}, any_grad(a), [c](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      if (Tensor* ga = t.grad_target(t.nodes_[self].inputs[0])) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
      }
    });
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data()) x = std::tanh(x);
    return push(Op::Tanh, std::move(out), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      if (Tensor* ga = t.grad_target(n.inputs[0])) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
      }
    });
  }

  // Elementwise log(sigmoid(x)), evaluated without overflow.
  Var log_sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data()) x = std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
    return push(Op::LogSigmoid, std::move(out), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      const Tensor& x = t.value({n.inputs[0]});
      if (Tensor* ga = t.grad_target(n.inputs[0])) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const double s = x[i] >= 0 ? std::exp(-x[i]) / (1.0 + std::exp(-x[i])) : 1.0 / (1.0 + std::exp(x[i]));
          (*ga)[i] += n.grad[i] * s;
        }
      }
    });
  }

  // Row-wise softmax. `active` (empty, or one flag per element) excludes entries:
  // excluded entries get exactly zero and receive no gradient. A row with no
  // active entries is all zero.
  Var softmax_rows(Var a, std::vector<std::uint8_t> active = {}) {
    const Tensor& x = value(a);
    if (!active.empty() && active.size() != x.size()) throw ContractError("softmax mask size mismatch");
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const std::size_t i = r * x.cols() + c;
        if (active.empty() || active[i]) mx = std::max(mx, x[i]);
      }
      if (!std::isfinite(mx)) continue;
      double z = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const std::size_t i = r * x.cols() + c;
        if (active.empty() || active[i]) z += (out[i] = std::exp(x[i] - mx));
      }
      for (std::size_t c = 0; c < x.cols(); ++c) out[r * x.cols() + c] /= z;
    }
    return push(Op::Softmax, std::move(out), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      Tensor* ga = t.grad_target(n.inputs[0]);
      if (!ga) return;
      const Tensor& y = n.value;
      const Tensor& g = n.grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) s += y(r, c) * g(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - s);
      }
    });
  }

  // Row-wise squash: (|c|^2 / (1 + |c|^2)) * c / |c|; rows with |c| < 1e-12 map to zero.
  Var squash_rows(Var a) {
    const Tensor& x = value(a);
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double n = std::sqrt(squared_norm(x.row_span(r)));
      if (n < kSquashEpsilon) continue;
      const double s = n / (1.0 + n * n);
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = s * x(r, c);
    }
    return push(Op::Squash, std::move(out), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& nd = t.nodes_[self];
      Tensor* ga = t.grad_target(nd.inputs[0]);
      if (!ga) return;
      const Tensor& x = t.value({nd.inputs[0]});
      const Tensor& g = nd.grad;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double n2 = squared_norm(x.row_span(r));
        const double n = std::sqrt(n2);
        if (n < kSquashEpsilon) continue;
        const double s = n / (1.0 + n2);
        const double ds_dn = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
        const double xg = dot(x.row_span(r), g.row_span(r));
        for (std::size_t c = 0; c < x.cols(); ++c) {
          (*ga)(r, c) += s * g(r, c) + x(r, c) * ds_dn / n * xg;
        }
      }
    });
  }

  Var mean_rows(Var a) {
    const Tensor& x = value(a);
    if (x.rows() == 0) throw ContractError("mean of zero rows");
    Tensor out(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (auto& v : out.data()) v *= inv;
    return push(Op::MeanRows, std::move(out), {a.id}, any_grad(a), [inv](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      if (Tensor* ga = t.grad_target(n.inputs[0])) {
        for (std::size_t r = 0; r < ga->rows(); ++r)
          for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += inv * n.grad[c];
      }
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data()) s += x;
    return push(Op::Sum, Tensor(1, 1, s), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      if (Tensor* ga = t.grad_target(n.inputs[0])) {
        for (auto& v : ga->data()) v += n.grad[0];
      }
    });
  }

  // Elementwise x^gamma; gamma is a constant, differentiated as gamma * x^(gamma-1).
  Var pow(Var a, double gamma) {
    Tensor out = value(a);
    for (auto& x : out.data()) x = gamma == 0.0 ? 1.0 : std::pow(x, gamma);
    return push(Op::Pow, std::move(out), {a.id}, any_grad(a), [gamma](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      Tensor* ga = t.grad_target(n.inputs[0]);
      if (!ga || gamma == 0.0) return;
      const Tensor& x = t.value({n.inputs[0]});
      for (std::size_t i = 0; i < x.size(); ++i) {
        (*ga)[i] += n.grad[i] * gamma * std::pow(x[i], gamma - 1.0);
      }
    });
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat of nothing");
    const std::size_t cols = value(parts[0]).cols();
    std::size_t rows = 0;
    std::vector<std::size_t> ids;
    bool rg = false;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw ContractError("concat_rows column mismatch");
      rows += value(p).rows();
      ids.push_back(p.id);
      rg = rg || node(p).requires_grad;
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto src = value(p).data();
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
      off += src.size();
    }
    return push(Op::ConcatRows, std::move(out), std::move(ids), rg, [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      std::size_t off = 0;
      for (std::size_t in : n.inputs) {
        const std::size_t len = t.value({in}).size();
        if (Tensor* gi = t.grad_target(in)) {
          for (std::size_t i = 0; i < len; ++i) (*gi)[i] += n.grad[off + i];
        }
        off += len;
      }
    });
  }

  // Constant sparse matrix times dense input.
  Var spmm(std::shared_ptr<const SparseRows> s, Var dense) {
    Tensor out = m2gnn::spmm(*s, value(dense));
    return push(Op::SpMM, std::move(out), {dense.id}, any_grad(dense),
                [s = std::move(s)](Tape& t, std::size_t self) {
                  const auto& n = t.nodes_[self];
                  Tensor* gd = t.grad_target(n.inputs[0]);
                  if (!gd) return;
                  for (std::size_t r = 0; r < s->rows; ++r) {
                    const auto grow = n.grad.row_span(r);
                    for (std::size_t k = s->offsets[r]; k < s->offsets[r + 1]; ++k) {
                      auto dst = gd->row_span(s->index[k]);
                      const double v = s->value[k];
                      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += v * grow[j];
                    }
                  }
                });
  }

  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor& x = value(a);
    Tensor out(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= x.rows()) throw ContractError("gather_rows index out of range");
      const auto src = x.row_span(rows[i]);
      std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return push(Op::GatherRows, std::move(out), {a.id}, any_grad(a),
                [rows = std::move(rows)](Tape& t, std::size_t self) {
                  const auto& n = t.nodes_[self];
                  Tensor* ga = t.grad_target(n.inputs[0]);
                  if (!ga) return;
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    auto dst = ga->row_span(rows[i]);
                    const auto g = n.grad.row_span(i);
                    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
                  }
                });
  }

  // Row-wise inner products: out(i, 0) = a.row(i) . b.row(i).
  Var rows_dot(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    x.require_same_shape(y, "rows_dot");
    Tensor out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = dot(x.row_span(r), y.row_span(r));
    return push(Op::RowsDot, std::move(out), {a.id, b.id}, any_grad(a, b), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      const Tensor& x = t.value({n.inputs[0]});
      const Tensor& y = t.value({n.inputs[1]});
      Tensor* gx = t.grad_target(n.inputs[0]);
      Tensor* gy = t.grad_target(n.inputs[1]);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double g = n.grad[r];
        for (std::size_t c = 0; c < x.cols(); ++c) {
          if (gx) (*gx)(r, c) += g * y(r, c);
          if (gy) (*gy)(r, c) += g * x(r, c);
        }
      }
    });
  }

  Var sum_squares(Var a) {
    double s = 0.0;
    for (double x : value(a).data()) s += x * x;
    return push(Op::SumSquares, Tensor(1, 1, s), {a.id}, any_grad(a), [](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      const Tensor& x = t.value({n.inputs[0]});
      if (Tensor* ga = t.grad_target(n.inputs[0])) {
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += 2.0 * x[i] * n.grad[0];
      }
    });
  }

 private:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Op op = Op::Constant;
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[v.id];
  }

  bool any_grad(Var a) const { return node(a).requires_grad; }
  bool any_grad(Var a, Var b) const { return node(a).requires_grad || node(b).requires_grad; }

  Var push(Op op, Tensor value, std::vector<std::size_t> inputs, bool requires_grad, Backward bw) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  // Gradient buffer of node `id`, allocated on first use; null for nodes that do
  // not require gradients.
  Tensor* grad_target(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.sink) return n.sink;
    if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  Var add_sub(Var a, Var b, double sign, Op op) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    x.require_same_shape(y, sign > 0 ? "add" : "sub");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * y[i];
    return push(op, std::move(out), {a.id, b.id}, any_grad(a, b), [sign](Tape& t, std::size_t self) {
      const auto& n = t.nodes_[self];
      if (Tensor* ga = t.grad_target(n.inputs[0])) *ga += n.grad;
      if (Tensor* gb = t.grad_target(n.inputs[1])) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i] += sign * n.grad[i];
      }
    });
  }

  std::vector<Node> nodes_;
};

}  // namespace m2gnn
