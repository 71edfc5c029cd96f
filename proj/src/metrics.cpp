#include "bbe/metrics.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "bbe/error.hpp"

namespace bbe {

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                          std::size_t n_classes) {
  if (preds.size() != labels.size()) {
    fail(ErrorKind::Input, fmt::format("confusion: {} predictions vs {} labels", preds.size(),
                                       labels.size()));
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || labels[i] >= n_classes) {
      fail(ErrorKind::Label, fmt::format("confusion: pair {} ({}, {}) outside {} classes", i,
                                         preds[i], labels[i], n_classes));
    }
    cm.at(labels[i], preds[i]) += 1;
  }
  return cm;
}

double uar(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const std::size_t support = cm.row_sum(c);
    if (support == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    ++present;
  }
  if (present == 0) fail(ErrorKind::Metric, "UAR of an empty confusion matrix");
  return sum / static_cast<double>(present);
}

namespace {

std::string pct(double v) { return fmt::format("{:.1f}", 100.0 * v); }

}  // namespace

Report make_report(const ResultTable& results) {
  if (results.empty()) fail(ErrorKind::Report, "report needs at least one corpus");
  Report r;
  for (const auto& [variant, _] : results.begin()->second) r.variants.push_back(variant);
  if (r.variants.empty()) fail(ErrorKind::Report, "report needs at least one variant");
  for (const auto& [corpus, row] : results) {
    bool same = row.size() == r.variants.size();
    for (std::size_t j = 0; same && j < r.variants.size(); ++j) same = row.contains(r.variants[j]);
    if (!same) fail(ErrorKind::Report, "corpus '" + corpus + "' has a different variant set");
    r.corpora.push_back(corpus);
    std::vector<double> values;
    for (const auto& v : r.variants) values.push_back(row.at(v));
    r.values.push_back(std::move(values));
  }

  const std::size_t nv = r.variants.size(), nc = r.corpora.size();
  r.average.assign(nv, 0.0);
  for (std::size_t j = 0; j < nv; ++j) {
    for (std::size_t i = 0; i < nc; ++i) r.average[j] += r.values[i][j];
    r.average[j] /= static_cast<double>(nc);
  }

  auto flag = [&](const std::vector<double>& row) {
    double best = row[0];
    for (double v : row) best = std::max(best, v);
    std::vector<bool> out;
    for (double v : row) out.push_back(v == best);
    return out;
  };
  for (const auto& row : r.values) r.best.push_back(flag(row));
  r.best.push_back(flag(r.average));

  std::size_t name_w = std::string_view("AVERAGE").size();
  for (const auto& c : r.corpora) name_w = std::max(name_w, c.size());
  std::vector<std::size_t> col_w;
  for (const auto& v : r.variants) col_w.push_back(std::max<std::size_t>(v.size(), 6));

  r.csv = "corpus";
  for (const auto& v : r.variants) r.csv += "," + v;
  r.csv += "\n";
  r.table = fmt::format("{:<{}}", "corpus", name_w);
  for (std::size_t j = 0; j < nv; ++j) r.table += fmt::format("  {:>{}}", r.variants[j], col_w[j]);
  r.table += "\n";

  auto emit = [&](const std::string& name, const std::vector<double>& row,
                  const std::vector<bool>& best) {
    r.csv += name;
    r.table += fmt::format("{:<{}}", name, name_w);
    for (std::size_t j = 0; j < nv; ++j) {
      r.csv += "," + pct(row[j]);
      r.table += fmt::format("  {:>{}}", pct(row[j]) + (best[j] ? "*" : " "), col_w[j]);
    }
    r.csv += "\n";
    r.table += "\n";
  };
  for (std::size_t i = 0; i < nc; ++i) emit(r.corpora[i], r.values[i], r.best[i]);
  emit("AVERAGE", r.average, r.best.back());
  return r;
}

std::size_t DurationHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), overflow);
}

std::string DurationHistogram::csv() const {
  std::string out = "bin_start_s,count\n";
  for (std::size_t k = 0; k < counts.size(); ++k) {
    out += fmt::format("{:.3f},{}\n", static_cast<double>(k) * bin_width_s, counts[k]);
  }
  out += fmt::format("{:.3f},{}\n", cap_s, overflow);
  return out;
}

std::string DurationHistogram::text() const {
  std::string out;
  const std::size_t n = total();
  for (std::size_t k = 0; k <= counts.size(); ++k) {
    const bool over = k == counts.size();
    const std::size_t c = over ? overflow : counts[k];
    const std::string label =
        over ? fmt::format(">= {:.2f}s", cap_s)
             : fmt::format("[{:.2f}, {:.2f})s", static_cast<double>(k) * bin_width_s,
                           std::min(cap_s, static_cast<double>(k + 1) * bin_width_s));
    const std::size_t bar = n ? (c * 40 + n - 1) / n : 0;
    out += fmt::format("{:<16} {:>6} {}\n", label, c, std::string(bar, '#'));
  }
  return out;
}

DurationHistogram duration_histogram(std::span<const double> durations, double bin_width_s,
                                     double cap_s) {
  if (!(bin_width_s > 0.0) || !std::isfinite(bin_width_s)) {
    fail(ErrorKind::Config, "bin width must be > 0");
  }
  if (!(cap_s > 0.0)) fail(ErrorKind::Config, "histogram cap must be > 0");
  DurationHistogram h;
  h.bin_width_s = bin_width_s;
  h.cap_s = cap_s;
  h.counts.assign(static_cast<std::size_t>(std::ceil(cap_s / bin_width_s)), 0);
  for (double d : durations) {
    if (!(d >= 0.0)) fail(ErrorKind::Ingest, fmt::format("negative duration {}", d));
    if (d >= cap_s) {
      ++h.overflow;
      continue;
    }
    const auto k = std::min(static_cast<std::size_t>(std::floor(d / bin_width_s)), h.counts.size() - 1);
    ++h.counts[k];
  }
  return h;
}

DurationHistogram duration_histogram(std::span<const CorpusManifest> manifests,
                                     double bin_width_s, double cap_s) {
  std::vector<double> durations;
  for (const auto& m : manifests) {
    for (const auto& s : m.samples) durations.push_back(s.duration_s);
  }
  return duration_histogram(durations, bin_width_s, cap_s);
}

}  // namespace bbe
