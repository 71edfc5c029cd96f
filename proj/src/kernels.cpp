#include "bbe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bbe::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelMinWork = 1 << 15;

inline bool valid_key(std::span<const std::uint8_t> mask, std::size_t j) {
  return mask.empty() || mask[j] != 0;
}

// One query row of one head. Shared by both schedules so the arithmetic is
// literally the same code.
void attention_row(std::span<const double> q, std::span<const double> k,
                   std::span<const double> v, std::span<const std::uint8_t> key_mask,
                   AttentionDims dims, std::size_t h, std::size_t i, std::span<double> probs,
                   std::span<double> out) {
  const std::size_t T = dims.frames, d = dims.model, dh = d / dims.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t col = h * dh;
  double* p = probs.data() + (h * T + i) * T;

  double mx = -INFINITY;
  for (std::size_t j = 0; j < T; ++j) {
    if (!valid_key(key_mask, j)) {
      p[j] = 0.0;
      continue;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < dh; ++c) s += q[i * d + col + c] * k[j * d + col + c];
    p[j] = s * scale;
    mx = std::max(mx, p[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < T; ++j) {
    if (!valid_key(key_mask, j)) continue;
    p[j] = std::exp(p[j] - mx);
    sum += p[j];
  }
  for (std::size_t j = 0; j < T; ++j) {
    if (valid_key(key_mask, j)) p[j] /= sum;
  }

  double* o = out.data() + i * d + col;
  std::fill(o, o + dh, 0.0);
  for (std::size_t j = 0; j < T; ++j) {
    if (!valid_key(key_mask, j)) continue;
    const double pj = p[j];
    const double* vr = v.data() + j * d + col;
    for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vr[c];
  }
}

void attention_backward_head(std::span<const double> q, std::span<const double> k,
                             std::span<const double> v, std::span<const double> probs,
                             std::span<const double> dout, std::span<const std::uint8_t> key_mask,
                             AttentionDims dims, std::size_t h, std::span<double> dq,
                             std::span<double> dk, std::span<double> dv) {
  const std::size_t T = dims.frames, d = dims.model, dh = d / dims.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t col = h * dh;
  std::vector<double> dp(T);

  for (std::size_t i = 0; i < T; ++i) {
    const double* p = probs.data() + (h * T + i) * T;
    const double* go = dout.data() + i * d + col;
    double dot = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      if (!valid_key(key_mask, j)) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += go[c] * v[j * d + col + c];
      dp[j] = s;
      dot += p[j] * s;
    }
    for (std::size_t j = 0; j < T; ++j) {
      if (!valid_key(key_mask, j)) continue;
      const double ds = p[j] * (dp[j] - dot) * scale;
      for (std::size_t c = 0; c < dh; ++c) {
        dv[j * d + col + c] += p[j] * go[c];
        dq[i * d + col + c] += ds * k[j * d + col + c];
        dk[j * d + col + c] += ds * q[i * d + col + c];
      }
    }
  }
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void linear(std::span<const double> a, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelMinWork;
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* o = out.data() + i * n;
    if (bias.empty()) {
      std::fill(o, o + n, 0.0);
    } else {
      std::copy(bias.begin(), bias.end(), o);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* wr = w.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * wr[j];
    }
  }
}

void accumulate_at_b(std::span<const double> a, std::span<const double> g, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelMinWork;
  const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pp = 0; pp < rows; ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    double* o = out.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* gr = g.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
  }
}

void accumulate_a_bt(std::span<const double> g, std::span<const double> w, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelMinWork;
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* gr = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* wr = w.data() + p * n;
      double s = out[i * k + p];
      for (std::size_t j = 0; j < n; ++j) s += gr[j] * wr[j];
      out[i * k + p] = s;
    }
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       AttentionDims dims, std::span<double> probs, std::span<double> out) {
  const std::size_t T = dims.frames;
  const bool par = dims.heads * T * T * (dims.model / dims.heads) >= kParallelMinWork;
  const auto total = static_cast<std::ptrdiff_t>(dims.heads * T);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t hi = 0; hi < total; ++hi) {
    const auto idx = static_cast<std::size_t>(hi);
    attention_row(q, k, v, key_mask, dims, idx / T, idx % T, probs, out);
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<const std::uint8_t> key_mask,
                        AttentionDims dims, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv) {
  const std::size_t T = dims.frames;
  const bool par = T * T * dims.model >= kParallelMinWork;
  const auto heads = static_cast<std::ptrdiff_t>(dims.heads);
  // Heads own disjoint column ranges of dq/dk/dv.
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t h = 0; h < heads; ++h) {
    attention_backward_head(q, k, v, probs, dout, key_mask, dims, static_cast<std::size_t>(h), dq,
                            dk, dv);
  }
}

namespace serial {

void linear(std::span<const double> a, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = bias.empty() ? 0.0 : bias[j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * w[p * n + j];
      out[i * n + j] = s;
    }
  }
}

void accumulate_at_b(std::span<const double> a, std::span<const double> g, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = out[p * n + j];
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * g[i * n + j];
      out[p * n + j] = s;
    }
  }
}

void accumulate_a_bt(std::span<const double> g, std::span<const double> w, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = out[i * k + p];
      for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * w[p * n + j];
      out[i * k + p] = s;
    }
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       AttentionDims dims, std::span<double> probs, std::span<double> out) {
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t i = 0; i < dims.frames; ++i) {
      attention_row(q, k, v, key_mask, dims, h, i, probs, out);
    }
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<const std::uint8_t> key_mask,
                        AttentionDims dims, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv) {
  for (std::size_t h = 0; h < dims.heads; ++h) {
    attention_backward_head(q, k, v, probs, dout, key_mask, dims, h, dq, dk, dv);
  }
}

}  // namespace serial
}  // namespace bbe::kernels
