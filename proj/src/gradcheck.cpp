#include "bbe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "bbe/error.hpp"
#include "bbe/rng.hpp"
#include "bbe/tape.hpp"

namespace bbe {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double central_difference(const std::function<double()>& f, double& x, double h) {
  const double orig = x;
  x = orig + h;
  const double up = f();
  x = orig - h;
  const double down = f();
  x = orig;
  return (up - down) / (2.0 * h);
}

GradCheckResult gradcheck_model(const EncoderModel& base, const GradCheckOptions& opt) {
  if (opt.probes == 0) fail(ErrorKind::Config, "gradcheck needs at least one probe");
  if (!(opt.step > 0.0)) fail(ErrorKind::Config, "gradcheck step must be > 0");
  EncoderModel model = base;
  std::vector<std::size_t> trainable;
  for (const auto& p : model.store) {
    if (!p.frozen) trainable.push_back(p.index);
  }
  if (trainable.empty()) fail(ErrorKind::Config, "gradcheck: every parameter is frozen");

  Rng rng(opt.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < opt.probes; ++k) {
    const std::size_t valid = opt.min_frames + rng.below(opt.max_frames - opt.min_frames + 1);
    const std::size_t pad = k % 2 ? 1 + rng.below(3) : 0;
    const std::size_t d = model.config.input_dim;
    Tensor input({valid + pad, d});
    for (std::size_t t = 0; t < valid; ++t) {
      for (std::size_t c = 0; c < d; ++c) input.at(t, c) = rng.normal();
    }
    std::vector<std::uint8_t> mask;
    if (pad) {
      mask.assign(valid + pad, 0);
      std::fill_n(mask.begin(), valid, 1);
    }
    const std::size_t label = rng.below(model.config.n_classes);
    const bool probe_input = k % 4 == 3;

    Tape tape(true);
    Var x;
    const Var logits = forward_tape(tape, model, input, mask, &x);
    tape.backward(ops::cross_entropy(tape, logits, label));
    std::string what;
    double analytic = 0.0;
    double* slot = nullptr;
    if (probe_input) {
      const std::size_t t = rng.below(valid);
      const std::size_t c = rng.below(d);
      analytic = tape.grad(x).at(t, c);
      slot = &input.at(t, c);
      what = fmt::format("input[{}, {}]", t, c);
    } else {
      Parameter& p = model.store[trainable[rng.below(trainable.size())]];
      const std::size_t e = rng.below(p.value.numel());
      for (auto& q : model.store) q.grad.fill(0.0);
      tape.accumulate_param_grads(model.store);
      analytic = p.grad[e];
      slot = &p.value[e];
      what = fmt::format("{}[{}]", p.name, e);
    }
    const auto f = [&] {
      return softmax_cross_entropy(forward(model, input, mask), label).loss;
    };
    const double numeric = central_difference(f, *slot, opt.step);
    const double err = relative_error(analytic, numeric, opt.floor);
    ++result.probes;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst = fmt::format("{}: analytic {:.10e}, numeric {:.10e}, rel {:.3e}", what,
                                 analytic, numeric, err);
    }
  }
  return result;
}

}  // namespace bbe
