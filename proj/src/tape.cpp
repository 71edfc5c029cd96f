#include "bbe/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "bbe/error.hpp"
#include "bbe/kernels.hpp"

namespace bbe {

Var Tape::push(Tensor value, bool requires_grad, Backward fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::param(const Parameter& p) {
  Var v = push(p.value, !p.frozen, nullptr);
  nodes_.back().param = &p;
  return v;
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor* Tape::grad_if_any(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad.shape() == n.value.shape() ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (!record_) fail(ErrorKind::State, "backward on a non-recording tape");
  if (nodes_.empty()) fail(ErrorKind::State, "backward without a recorded forward pass");
  if (backward_done_) fail(ErrorKind::State, "backward already ran on this tape");
  if (loss.id >= nodes_.size()) fail(ErrorKind::State, "backward on an unknown node");
  if (nodes_[loss.id].value.numel() != 1) {
    fail(ErrorKind::State, "backward requires a scalar loss, got shape " +
                               shape_str(nodes_[loss.id].value.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.shape() != n.value.shape()) continue;  // no gradient reached it
    n.backward(*this, i);
  }
}

void Tape::accumulate_param_grads(ParameterStore& store, double scale) const {
  for (const Node& n : nodes_) {
    if (!n.param || n.param->frozen || n.grad.shape() != n.value.shape()) continue;
    Parameter& p = store[n.param->index];
    auto dst = p.grad.data();
    auto src = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t C = logits.numel();
  if (label >= C) {
    fail(ErrorKind::Label, "label " + std::to_string(label) + " out of range for " +
                               std::to_string(C) + " classes");
  }
  const auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double log_sum = std::log(sum);
  CrossEntropy out;
  out.loss = log_sum - (z[label] - mx);
  out.grad = Tensor({C});
  for (std::size_t c = 0; c < C; ++c) out.grad[c] = std::exp(z[c] - mx - log_sum);
  out.grad[label] -= 1.0;
  return out;
}

namespace ops {
namespace {

std::vector<std::uint8_t> copy_mask(std::span<const std::uint8_t> mask) {
  return {mask.begin(), mask.end()};
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  if (wv.rank() != 2) fail(ErrorKind::Dimension, "linear weight must be 2-D");
  const std::size_t d_in = wv.shape()[0], d_out = wv.shape()[1];
  if (xv.rank() == 0 || xv.cols() != d_in) {
    fail(ErrorKind::Dimension, "linear: input " + shape_str(xv.shape()) + " vs weight " +
                                   shape_str(wv.shape()));
  }
  if (bv.rank() != 1 || bv.numel() != d_out) {
    fail(ErrorKind::Dimension, "linear: bias " + shape_str(bv.shape()) + " vs d_out " +
                                   std::to_string(d_out));
  }
  const std::size_t m = xv.rows();
  Shape out_shape = xv.shape();
  out_shape.back() = d_out;
  Tensor out(out_shape);
  kernels::linear(xv.data(), wv.data(), bv.data(), out.data(), m, d_in, d_out);
  require_finite(out, "linear");

  const bool rg = t.requires_grad(x) || t.requires_grad(weight) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [x, weight, bias, m, d_in, d_out](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.grad(Var{self});
    if (tp.requires_grad(x)) {
      kernels::accumulate_a_bt(gy.data(), tp.value(weight).data(), tp.grad(x).data(), m, d_in,
                               d_out);
    }
    if (tp.requires_grad(weight)) {
      kernels::accumulate_at_b(tp.value(x).data(), gy.data(), tp.grad(weight).data(), m, d_in,
                               d_out);
    }
    if (tp.requires_grad(bias)) {
      auto gb = tp.grad(bias).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < d_out; ++j) gb[j] += gy[i * d_out + j];
      }
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::Config, "layer_norm eps must be > 0");
  const Tensor& xv = t.value(x);
  const std::size_t d = xv.rank() ? xv.cols() : 0;
  if (d == 0) fail(ErrorKind::Dimension, "layer_norm over an empty axis");
  if (t.value(gain).numel() != d || t.value(shift).numel() != d) {
    fail(ErrorKind::Dimension, "layer_norm gain/shift width does not match " + std::to_string(d));
  }
  const std::size_t rows = xv.rows();
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Tensor out(xv.shape());
  const auto g = t.value(gain).data();
  const auto s = t.value(shift).data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    auto hr = xhat->row(r);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * inv;
      orow[c] = hr[c] * g[c] + s[c];
    }
  }
  require_finite(out, "layer_norm");

  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(shift);
  return t.push(std::move(out), rg,
                [x, gain, shift, xhat, rstd, rows, d](Tape& tp, std::size_t self) {
                  const Tensor& gy = tp.grad(Var{self});
                  const auto gv = tp.value(gain).data();
                  if (tp.requires_grad(gain)) {
                    auto gg = tp.grad(gain).data();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < d; ++c) gg[c] += gy.at(r, c) * xhat->at(r, c);
                    }
                  }
                  if (tp.requires_grad(shift)) {
                    auto gs = tp.grad(shift).data();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < d; ++c) gs[c] += gy.at(r, c);
                    }
                  }
                  if (tp.requires_grad(x)) {
                    Tensor& gx = tp.grad(x);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double sum_g = 0.0, sum_gx = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double gh = gy.at(r, c) * gv[c];
                        sum_g += gh;
                        sum_gx += gh * xhat->at(r, c);
                      }
                      for (std::size_t c = 0; c < d; ++c) {
                        const double gh = gy.at(r, c) * gv[c];
                        gx.at(r, c) += (*rstd)[r] *
                                       (gh - sum_g * inv_d - xhat->at(r, c) * sum_gx * inv_d);
                      }
                    }
                  }
                });
}

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  require_finite(out, "gelu");
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Tensor& gy = tp.grad(Var{self});
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += gy[i] * (cdf + v * pdf);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) {
    fail(ErrorKind::Dimension, "add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  require_finite(out, "add");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.grad(Var{self});
    if (tp.requires_grad(a)) add_into(tp.grad(a), gy);
    if (tp.requires_grad(b)) add_into(tp.grad(b), gy);
  });
}

Var scale(Tape& t, Var x, double s) {
  Tensor out = t.value(x);
  for (auto& v : out.data()) v *= s;
  require_finite(out, "scale");
  return t.push(std::move(out), t.requires_grad(x), [x, s](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.grad(Var{self});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += s * gy[i];
  });
}

Var slice_rows(Tape& t, Var x, std::size_t count) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2) fail(ErrorKind::Dimension, "slice_rows expects [T, d]");
  const std::size_t d = xv.shape()[1];
  count = std::min(count, xv.shape()[0]);
  Tensor out({count, d});
  std::copy(xv.data().begin(), xv.data().begin() + static_cast<std::ptrdiff_t>(count * d),
            out.data().begin());
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.grad(Var{self});
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
  });
}

Var attention(Tape& t, Var q, Var k, Var v, std::size_t heads,
              std::span<const std::uint8_t> key_mask) {
  const Tensor& qv = t.value(q);
  if (qv.rank() != 2) fail(ErrorKind::Dimension, "attention expects [T, d] inputs");
  if (t.value(k).shape() != qv.shape() || t.value(v).shape() != qv.shape()) {
    fail(ErrorKind::Dimension, "attention q/k/v shapes differ");
  }
  const std::size_t T = qv.shape()[0], d = qv.shape()[1];
  if (heads == 0 || d % heads != 0) {
    fail(ErrorKind::Config, "model width " + std::to_string(d) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (!key_mask.empty() && key_mask.size() != T) {
    fail(ErrorKind::Dimension, "attention mask length does not match frame count");
  }
  if (!key_mask.empty() && std::none_of(key_mask.begin(), key_mask.end(),
                                        [](std::uint8_t m) { return m != 0; })) {
    fail(ErrorKind::Input, "attention over a fully masked sequence");
  }
  const kernels::AttentionDims dims{T, d, heads};
  auto probs = std::make_shared<std::vector<double>>(heads * T * T);
  Tensor out({T, d});
  kernels::attention_forward(qv.data(), t.value(k).data(), t.value(v).data(), key_mask, dims,
                             *probs, out.data());
  require_finite(out, "attention");

  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(std::move(out), rg,
                [q, k, v, dims, probs, mask = copy_mask(key_mask)](Tape& tp, std::size_t self) {
                  // Scratch buffers for inputs that do not need a gradient.
                  Tensor dq_scratch, dk_scratch, dv_scratch;
                  auto target = [&tp](Var var, Tensor& scratch) -> Tensor& {
                    if (tp.requires_grad(var)) return tp.grad(var);
                    scratch = Tensor(tp.value(var).shape());
                    return scratch;
                  };
                  Tensor& dq = target(q, dq_scratch);
                  Tensor& dk = target(k, dk_scratch);
                  Tensor& dv = target(v, dv_scratch);
                  kernels::attention_backward(tp.value(q).data(), tp.value(k).data(),
                                              tp.value(v).data(), *probs,
                                              tp.grad(Var{self}).data(), mask, dims, dq.data(),
                                              dk.data(), dv.data());
                });
}

Var mean_pool(Tape& t, Var x, std::span<const std::uint8_t> mask) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2) fail(ErrorKind::Dimension, "mean_pool expects [T, d]");
  const std::size_t T = xv.shape()[0], d = xv.shape()[1];
  if (!mask.empty() && mask.size() != T) {
    fail(ErrorKind::Dimension, "pooling mask length does not match frame count");
  }
  std::size_t n = 0;
  Tensor out({d});
  for (std::size_t r = 0; r < T; ++r) {
    if (!mask.empty() && mask[r] == 0) continue;
    ++n;
    auto xr = xv.row(r);
    for (std::size_t c = 0; c < d; ++c) out[c] += xr[c];
  }
  if (n == 0) fail(ErrorKind::Input, "mean_pool over zero valid frames");
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.data()) v *= inv;
  require_finite(out, "mean_pool");
  return t.push(std::move(out), t.requires_grad(x),
                [x, T, d, inv, m = copy_mask(mask)](Tape& tp, std::size_t self) {
                  const Tensor& gy = tp.grad(Var{self});
                  Tensor& gx = tp.grad(x);
                  for (std::size_t r = 0; r < T; ++r) {
                    if (!m.empty() && m[r] == 0) continue;
                    for (std::size_t c = 0; c < d; ++c) gx.at(r, c) += gy[c] * inv;
                  }
                });
}

Var conv1d(Tape& t, Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  if (xv.rank() != 2) fail(ErrorKind::Dimension, "conv1d expects [L, channels]");
  if (kernel == 0 || stride == 0) fail(ErrorKind::Config, "conv1d kernel and stride must be >= 1");
  const std::size_t L = xv.shape()[0], c_in = xv.shape()[1];
  if (wv.rank() != 2 || wv.shape()[0] != kernel * c_in) {
    fail(ErrorKind::Dimension, "conv1d weight " + shape_str(wv.shape()) + " does not match kernel " +
                                   std::to_string(kernel) + " x " + std::to_string(c_in));
  }
  const std::size_t c_out = wv.shape()[1];
  if (t.value(bias).numel() != c_out) fail(ErrorKind::Dimension, "conv1d bias width mismatch");
  if (L < kernel) {
    fail(ErrorKind::Input, "input of length " + std::to_string(L) +
                               " is shorter than the receptive field " + std::to_string(kernel));
  }
  const std::size_t T = (L - kernel) / stride + 1;
  const std::size_t width = kernel * c_in;
  auto patches = std::make_shared<std::vector<double>>(T * width);
  for (std::size_t r = 0; r < T; ++r) {
    const double* src = xv.data().data() + r * stride * c_in;
    std::copy(src, src + width, patches->data() + r * width);
  }
  Tensor out({T, c_out});
  kernels::linear(*patches, wv.data(), t.value(bias).data(), out.data(), T, width, c_out);
  require_finite(out, "conv1d");

  const bool rg = t.requires_grad(x) || t.requires_grad(weight) || t.requires_grad(bias);
  return t.push(std::move(out), rg,
                [x, weight, bias, patches, T, width, c_out, c_in, stride](Tape& tp,
                                                                         std::size_t self) {
                  const Tensor& gy = tp.grad(Var{self});
                  if (tp.requires_grad(weight)) {
                    kernels::accumulate_at_b(*patches, gy.data(), tp.grad(weight).data(), T,
                                             width, c_out);
                  }
                  if (tp.requires_grad(bias)) {
                    auto gb = tp.grad(bias).data();
                    for (std::size_t r = 0; r < T; ++r) {
                      for (std::size_t j = 0; j < c_out; ++j) gb[j] += gy.at(r, j);
                    }
                  }
                  if (tp.requires_grad(x)) {
                    std::vector<double> gpatch(T * width, 0.0);
                    kernels::accumulate_a_bt(gy.data(), tp.value(weight).data(), gpatch, T, width,
                                             c_out);
                    auto gx = tp.grad(x).data();
                    for (std::size_t r = 0; r < T; ++r) {
                      for (std::size_t i = 0; i < width; ++i) {
                        gx[r * stride * c_in + i] += gpatch[r * width + i];
                      }
                    }
                  }
                });
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  CrossEntropy ce = softmax_cross_entropy(t.value(logits), label);
  if (!std::isfinite(ce.loss)) fail(ErrorKind::Numerical, "non-finite cross-entropy");
  auto grad = std::make_shared<Tensor>(std::move(ce.grad));
  return t.push(Tensor({1}, std::vector<double>{ce.loss}), t.requires_grad(logits),
                [logits, grad](Tape& tp, std::size_t self) {
                  const double gy = tp.grad(Var{self})[0];
                  Tensor& gl = tp.grad(logits);
                  for (std::size_t i = 0; i < gl.numel(); ++i) gl[i] += gy * (*grad)[i];
                });
}

Var multi_head_attention(Tape& t, Var x, const AttentionParams& p, std::size_t heads,
                         std::span<const std::uint8_t> key_mask) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2) fail(ErrorKind::Dimension, "multi_head_attention expects [T, d]");
  if (heads == 0 || xv.cols() % heads != 0) {
    fail(ErrorKind::Config, "model width " + std::to_string(xv.cols()) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  Var q = linear(t, x, p.wq, p.bq);
  Var k = linear(t, x, p.wk, p.bk);
  Var v = linear(t, x, p.wv, p.bv);
  Var ctx = attention(t, q, k, v, heads, key_mask);
  return linear(t, ctx, p.wo, p.bo);
}

}  // namespace ops
}  // namespace bbe
