#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "bbe/encoder.hpp"
#include "bbe/tensor.hpp"

namespace bbe {

struct GradCheckOptions {
  std::size_t probes = 100;
  double step = 1e-6;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged by absolute error instead.
  double floor = 1e-4;
  std::uint64_t seed = 0;
  std::size_t min_frames = 2;
  std::size_t max_frames = 6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // description of the worst probe
};

double relative_error(double analytic, double numeric, double floor);

// Central difference of f at x along coordinate i.
double central_difference(const std::function<double()>& f, double& x, double h);

// Probes random (parameter entry or input entry, input, label) triples of a
// full model with the mean cross-entropy loss. About one probe in four is an
// input entry; half of the inputs carry trailing padding with a mask.
GradCheckResult gradcheck_model(const EncoderModel& model, const GradCheckOptions& options);

}  // namespace bbe
