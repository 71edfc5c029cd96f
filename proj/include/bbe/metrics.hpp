#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "bbe/corpus.hpp"

namespace bbe {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // row-major n_classes x n_classes

  explicit ConfusionMatrix(std::size_t c = 0) : n_classes(c), counts(c * c, 0) {}

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n_classes + pred]; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                          std::size_t n_classes);

// Mean recall over classes with nonzero support.
double uar(const ConfusionMatrix& cm);

// corpus -> variant -> UAR in [0, 1]
using ResultTable = std::map<std::string, std::map<std::string, double>>;

struct Report {
  std::vector<std::string> variants;
  std::vector<std::string> corpora;              // row order, AVERAGE excluded
  std::vector<std::vector<double>> values;       // [corpora][variants]
  std::vector<double> average;                   // per variant
  std::vector<std::vector<bool>> best;           // [corpora + 1][variants]
  std::string table;                             // aligned text, '*' marks best
  std::string csv;
};

// Corpora and variants appear in lexicographic order. Percentages use one
// decimal place.
Report make_report(const ResultTable& results);

inline constexpr double kDisplayCapSeconds = 6.0;

struct DurationHistogram {
  double bin_width_s = 1.0;
  double cap_s = kDisplayCapSeconds;
  std::vector<std::size_t> counts;  // bins covering [0, cap_s)
  std::size_t overflow = 0;         // durations >= cap_s

  std::size_t total() const;
  std::string csv() const;
  std::string text() const;
};

DurationHistogram duration_histogram(std::span<const double> durations, double bin_width_s,
                                     double cap_s = kDisplayCapSeconds);
DurationHistogram duration_histogram(std::span<const CorpusManifest> manifests,
                                     double bin_width_s, double cap_s = kDisplayCapSeconds);

}  // namespace bbe
