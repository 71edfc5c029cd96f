#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bbe/params.hpp"
#include "bbe/tensor.hpp"

namespace bbe {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode gradient tape. Each differentiable op pushes its output plus a
// closure that propagates the output gradient to its inputs. A tape belongs to
// one forward pass on one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  // With record == false the tape is a plain evaluator: no closures are kept
  // and backward() is a state error.
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  // Leaf that accumulates gradient in the tape, e.g. for input gradient checks.
  Var leaf(Tensor value);
  // Leaf bound to a stored parameter. Frozen parameters do not require grad.
  Var param(const Parameter& p);

  Var push(Tensor value, bool requires_grad, Backward fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Gradient buffer of a node, zero-filled on first access.
  Tensor& grad(Var v);
  const Tensor* grad_if_any(Var v) const;

  // Propagates d(loss)/d(node) for every node. loss must be a scalar.
  void backward(Var loss);

  // store[p].grad += scale * d(loss)/d(p) for every non-frozen parameter leaf.
  void accumulate_param_grads(ParameterStore& store, double scale = 1.0) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    const Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  bool record_ = true;
  bool backward_done_ = false;
};

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  // softmax(logits) - one_hot(label)
};

// Max-shifted softmax cross-entropy on a single logit vector.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label);

namespace ops {

// y[..., j] = sum_i x[..., i] w[i, j] + b[j]
Var linear(Tape& t, Var x, Var weight, Var bias);
// Per last-axis slice, population variance.
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps);
// Exact erf form.
Var gelu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double s);
// First `count` rows of x [T, d].
Var slice_rows(Tape& t, Var x, std::size_t count);
// Fused multi-head scaled dot-product attention on projected q/k/v [T, d].
Var attention(Tape& t, Var q, Var k, Var v, std::size_t heads,
              std::span<const std::uint8_t> key_mask);
// Mean over valid rows of x [T, d] -> [d].
Var mean_pool(Tape& t, Var x, std::span<const std::uint8_t> mask);
// Strided valid 1-D convolution. x [L, c_in], weight [kernel * c_in, c_out].
Var conv1d(Tape& t, Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride);
// Scalar loss.
Var cross_entropy(Tape& t, Var logits, std::size_t label);

struct AttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

Var multi_head_attention(Tape& t, Var x, const AttentionParams& p, std::size_t heads,
                         std::span<const std::uint8_t> key_mask);

}  // namespace ops
}  // namespace bbe
