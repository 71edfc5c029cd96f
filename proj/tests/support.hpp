#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bbe/corpus.hpp"
#include "bbe/encoder.hpp"
#include "bbe/error.hpp"
#include "bbe/rng.hpp"
#include "bbe/tape.hpp"
#include "bbe/tensor.hpp"

namespace test {

inline bbe::EncoderConfig tiny_config(std::size_t blocks = 2, std::size_t d = 8) {
  bbe::EncoderConfig c;
  c.n_blocks = blocks;
  c.d_model = d;
  c.n_heads = 2;
  c.d_ffn = 2 * d;
  c.input_dim = d;
  return c;
}

inline bbe::Tensor random_tensor(bbe::Shape shape, bbe::Rng& rng, double scale = 1.0) {
  bbe::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bbe_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename F>
bbe::ErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const bbe::Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected a bbe::Error");
}

template <typename F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const bbe::Error& e) {
    return e.what();
  }
  return {};
}

// Scalar loss builder over a list of leaves.
using LossFn = std::function<bbe::Var(bbe::Tape&, const std::vector<bbe::Var>&)>;

// Max relative error between tape gradients and central differences for
// every entry of every input.
inline double op_gradcheck(std::vector<bbe::Tensor> inputs, const LossFn& loss,
                           double h = 1e-6, double floor = 1e-3) {
  bbe::Tape tape(true);
  std::vector<bbe::Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(loss(tape, leaves));

  auto eval = [&] {
    bbe::Tape t(false);
    std::vector<bbe::Var> vs;
    for (const auto& x : inputs) vs.push_back(t.constant(x));
    return t.value(loss(t, vs))[0];
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto* g = tape.grad_if_any(leaves[i]);
    for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
      const double orig = inputs[i][e];
      inputs[i][e] = orig + h;
      const double up = eval();
      inputs[i][e] = orig - h;
      const double down = eval();
      inputs[i][e] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g ? (*g)[e] : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

inline bbe::SynthSpec small_synth(const std::string& id, std::uint64_t seed) {
  bbe::SynthSpec s;
  s.corpus_id = id;
  s.seed = seed;
  s.samples_per_speaker = 4;
  s.d = 8;
  return s;
}

}  // namespace test
