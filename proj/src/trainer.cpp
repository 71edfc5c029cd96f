#include "bbe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>

#include <fmt/format.h>

#include "bbe/error.hpp"
#include "bbe/expansion.hpp"
#include "bbe/tape.hpp"

namespace bbe {

const char* to_string(Stage stage) noexcept {
  return stage == Stage::MultiCorpus ? "multi_corpus" : "single_corpus";
}

const char* to_string(Selection selection) noexcept {
  return selection == Selection::BestVal ? "best_val" : "last_step";
}

Stage parse_stage(const std::string& s) {
  if (s == "multi_corpus") return Stage::MultiCorpus;
  if (s == "single_corpus") return Stage::SingleCorpus;
  fail(ErrorKind::Config, "unknown stage '" + s + "'");
}

Selection parse_selection(const std::string& s) {
  if (s == "best_val") return Selection::BestVal;
  if (s == "last_step") return Selection::LastStep;
  fail(ErrorKind::Config, "unknown selection rule '" + s + "'");
}

void TrainConfig::validate() const {
  adamw.validate();
  if (n_steps < 1) fail(ErrorKind::Config, "n_steps must be >= 1");
  if (eval_every < 1) fail(ErrorKind::Config, "eval_every must be >= 1");
  if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
  if (frame_cap < 1) fail(ErrorKind::Config, "frame_cap must be >= 1");
  if (expand_multiplier != 0 && expand_multiplier != 2 && expand_multiplier != 3) {
    fail(ErrorKind::Config, "expand_multiplier must be 0, 2 or 3");
  }
}

std::string TrainLog::loss_csv() const {
  std::string out = "step,corpus,loss\n";
  for (const auto& r : losses) out += fmt::format("{},{},{:.17g}\n", r.step, r.corpus_id, r.loss);
  return out;
}

std::string TrainLog::eval_csv() const {
  std::string out = "step,corpus,val_uar\n";
  for (const auto& r : evals) out += fmt::format("{},{},{:.17g}\n", r.step, r.corpus_id, r.val_uar);
  return out;
}

std::vector<std::size_t> predict_split(const EncoderModel& model, const CorpusManifest& corpus,
                                       Split split) {
  const auto idx = corpus.indices(split);
  std::vector<std::size_t> preds(idx.size());
  std::vector<std::exception_ptr> errors(idx.size());
  const auto n = static_cast<std::ptrdiff_t>(idx.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      preds[i] = argmax(forward(model, corpus.samples[idx[i]].frames));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return preds;
}

EvalResult evaluate(const EncoderModel& model, const CorpusManifest& corpus, Split split) {
  const auto idx = corpus.indices(split);
  if (idx.empty()) {
    fail(ErrorKind::Metric, "eval: corpus '" + corpus.corpus_id + "' has no " + to_string(split) +
                                " samples");
  }
  const auto preds = predict_split(model, corpus, split);
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) labels.push_back(corpus.samples[i].mapped_class);
  EvalResult r;
  r.confusion = confusion(preds, labels, model.config.n_classes);
  r.uar = uar(r.confusion);
  r.n_samples = idx.size();
  return r;
}

double train_step(EncoderModel& model, const Batch& batch, const AdamWConfig& adamw) {
  const std::size_t B = batch.size();
  if (B == 0) fail(ErrorKind::Input, "empty batch");
  std::vector<std::unique_ptr<Tape>> tapes(B);
  std::vector<double> losses(B, 0.0);
  std::vector<std::exception_ptr> errors(B);
  const auto n = static_cast<std::ptrdiff_t>(B);
  // Samples run in parallel; gradients are summed afterwards in sample order so
  // results do not depend on the thread count.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t b = 0; b < n; ++b) {
    try {
      auto tape = std::make_unique<Tape>(true);
      const Var logits = forward_tape(*tape, model, batch.row_frames(b));
      const Var loss = ops::cross_entropy(*tape, logits, batch.labels[b]);
      losses[b] = tape->value(loss)[0];
      tape->backward(loss);
      tapes[b] = std::move(tape);
    } catch (...) {
      errors[b] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double mean = 0.0;
  for (double l : losses) mean += l;
  mean /= static_cast<double>(B);
  if (!std::isfinite(mean)) return mean;

  const double scale = 1.0 / static_cast<double>(B);
  for (const auto& tape : tapes) tape->accumulate_param_grads(model.store, scale);
  adamw_step(model.store, adamw);
  return mean;
}

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void abort_numerical(const TrainLog& log, std::size_t step, const std::string& corpus,
                                  double loss) {
  std::string tail;
  const std::size_t from = log.losses.size() > 10 ? log.losses.size() - 10 : 0;
  for (std::size_t i = from; i < log.losses.size(); ++i) {
    tail += fmt::format(" {}:{:.6g}", log.losses[i].step, log.losses[i].loss);
  }
  fail(ErrorKind::Numerical, fmt::format("non-finite loss {} at step {} on corpus '{}'; last losses:{}",
                                         loss, step, corpus, tail.empty() ? " (none)" : tail));
}

// Round-robin loop shared by both stages. A single corpus degenerates to
// plain single-corpus training.
void run_training(EncoderModel& model, std::span<const CorpusManifest> corpora,
                  const TrainConfig& cfg, TrainLog& log) {
  std::vector<std::string> ids;
  std::vector<CorpusIterator> iters;
  const Rng root(cfg.seed);
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    ids.push_back(corpora[i].corpus_id);
    iters.emplace_back(corpora[i], Split::Train, root.fork(i + 1).next_u64());
  }
  const RoundRobinSchedule schedule(ids);

  std::optional<EncoderModel> best;
  double best_score = -1.0;
  auto eval_all = [&](std::size_t step) {
    double sum = 0.0;
    for (const auto& c : corpora) {
      double u = 0.0;
      try {
        u = evaluate(model, c, Split::Val).uar;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numerical) throw;
        fail(ErrorKind::Numerical, fmt::format("validation at step {} on corpus '{}': {}", step,
                                               c.corpus_id, e.what()));
      }
      log.evals.push_back({step, c.corpus_id, u});
      sum += u;
    }
    const double score = sum / static_cast<double>(corpora.size());
    if (score > best_score) {
      best_score = score;
      log.selected_step = step;
      if (cfg.selection == Selection::BestVal) best = model;
    }
  };

  eval_all(0);
  for (std::size_t step = 0; step < cfg.n_steps; ++step) {
    const std::size_t c = schedule.index_at(step);
    const Batch batch = next_batch(iters[c], cfg.batch_size, cfg.frame_cap);
    double loss = 0.0;
    try {
      loss = train_step(model, batch, cfg.adamw);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      abort_numerical(log, step, ids[c], std::numeric_limits<double>::quiet_NaN());
    }
    if (!std::isfinite(loss)) abort_numerical(log, step, ids[c], loss);
    log.losses.push_back({step, ids[c], loss});
    const std::size_t done = step + 1;
    if (done % cfg.eval_every == 0 || done == cfg.n_steps) eval_all(done);
  }
  if (cfg.selection == Selection::BestVal) {
    model = std::move(*best);
  } else {
    log.selected_step = cfg.n_steps;
  }
}

}  // namespace

TrainResult train_multi(EncoderModel model, std::span<const CorpusManifest> corpora,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.stage != Stage::MultiCorpus) fail(ErrorKind::Config, "train_multi needs stage multi_corpus");
  if (corpora.empty()) fail(ErrorKind::Config, "train_multi needs at least one corpus");
  const auto t0 = Clock::now();
  TrainResult r{std::move(model), {}};
  if (r.model.expansion) {
    apply_freeze_policy(r.model, r.model.expansion->freeze_policy);
  } else {
    apply_freeze_policy(r.model, cfg.freeze_policy);
  }
  run_training(r.model, corpora, cfg, r.log);
  r.log.wall_clock_s.emplace_back("stage1",
                                  std::chrono::duration<double>(Clock::now() - t0).count());
  return r;
}

TrainResult train_transfer(const EncoderModel& base, const CorpusManifest& target,
                           const TrainConfig& cfg, std::size_t n_classes) {
  cfg.validate();
  if (cfg.stage != Stage::SingleCorpus) {
    fail(ErrorKind::Config, "train_transfer needs stage single_corpus");
  }
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    if (target.indices(sp).empty()) {
      fail(ErrorKind::Split, "target corpus '" + target.corpus_id + "' has no " + to_string(sp) +
                                 " split");
    }
  }
  const auto t0 = Clock::now();
  EncoderModel model = base;
  if (model.config.n_classes != n_classes) reinit_head(model, n_classes);
  // Stage 2 starts a fresh optimizer run.
  for (auto& p : model.store) {
    p.m.fill(0.0);
    p.v.fill(0.0);
    p.step = 0;
    p.grad.fill(0.0);
  }

  TrainResult r;
  if (cfg.expand_multiplier != 0) {
    ExpansionSpec spec;
    spec.multiplier = cfg.expand_multiplier;
    spec.freeze_policy = cfg.freeze_policy;
    r.model = expand(model, spec);
    std::vector<Tensor> probes =
        random_probes(model.config, cfg.preservation_probes, 1, 32, Rng(cfg.seed).fork(99).next_u64());
    for (std::size_t i : target.indices(Split::Val)) probes.push_back(target.samples[i].frames);
    r.log.preservation_max_abs = verify_preservation(model, r.model, probes);
    if (r.log.preservation_max_abs != 0.0) {
      fail(ErrorKind::Invariant, fmt::format("expansion changed the network output: max|diff| = {}",
                                             r.log.preservation_max_abs));
    }
  } else {
    r.model = std::move(model);
    apply_freeze_policy(r.model, cfg.freeze_policy);
  }
  const CorpusManifest* one = &target;
  run_training(r.model, std::span(one, 1), cfg, r.log);
  r.log.wall_clock_s.emplace_back("stage2",
                                  std::chrono::duration<double>(Clock::now() - t0).count());
  return r;
}

std::size_t class_count(const CorpusManifest& corpus) {
  std::size_t c = 0;
  for (const auto& s : corpus.samples) c = std::max(c, s.mapped_class + 1);
  return c;
}

}  // namespace bbe
