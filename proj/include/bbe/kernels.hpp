#pragma once

// Dense kernels behind the differentiable ops.
//
// Two implementations are kept side by side: `serial` is the straightforward
// loop nest used as the test reference, and the unqualified versions are
// cache-blocked and OpenMP-parallel over independent output rows. Every output
// element is reduced in the same order by both, so results are bit-identical
// for any thread count.
//
// Row-major layouts throughout. `accumulate` variants add into `out`.

#include <cstddef>
#include <cstdint>
#include <span>

namespace bbe::kernels {

struct AttentionDims {
  std::size_t frames;  // T
  std::size_t model;   // d
  std::size_t heads;   // h, divides d
};

// out[m,n] = bias[n] + sum_p a[m,p] * w[p,n]. Empty bias means zero.
void linear(std::span<const double> a, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t m, std::size_t k, std::size_t n);

// out[k,n] += sum_i a[i,k] * g[i,n]   (weight gradient, a^T g)
void accumulate_at_b(std::span<const double> a, std::span<const double> g, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n);

// out[m,k] += sum_j g[m,j] * w[k,j]   (input gradient, g w^T)
void accumulate_a_bt(std::span<const double> g, std::span<const double> w, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n);

// Scaled dot-product attention over `heads` column groups of q/k/v [T,d].
// key_mask[j] == 0 drops key j from every softmax; empty mask keeps all.
// probs receives [h,T,T] softmax weights (masked entries are 0).
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       AttentionDims dims, std::span<double> probs, std::span<double> out);

// Accumulates dq/dk/dv given dout and the probs saved by attention_forward.
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<const std::uint8_t> key_mask,
                        AttentionDims dims, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv);

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads() noexcept;

namespace serial {

void linear(std::span<const double> a, std::span<const double> w, std::span<const double> bias,
            std::span<double> out, std::size_t m, std::size_t k, std::size_t n);
void accumulate_at_b(std::span<const double> a, std::span<const double> g, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n);
void accumulate_a_bt(std::span<const double> g, std::span<const double> w, std::span<double> out,
                     std::size_t m, std::size_t k, std::size_t n);
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<const std::uint8_t> key_mask,
                       AttentionDims dims, std::span<double> probs, std::span<double> out);
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<const std::uint8_t> key_mask,
                        AttentionDims dims, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv);

}  // namespace serial

}  // namespace bbe::kernels
