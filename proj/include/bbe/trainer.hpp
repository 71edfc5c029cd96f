#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbe/corpus.hpp"
#include "bbe/encoder.hpp"
#include "bbe/metrics.hpp"
#include "bbe/params.hpp"

namespace bbe {

enum class Stage { MultiCorpus, SingleCorpus };
enum class Selection { BestVal, LastStep };

const char* to_string(Stage stage) noexcept;
const char* to_string(Selection selection) noexcept;
Stage parse_stage(const std::string& s);
Selection parse_selection(const std::string& s);

struct TrainConfig {
  AdamWConfig adamw{};
  std::size_t n_steps = 3000;
  std::size_t batch_size = 16;
  std::size_t frame_cap = 512;  // raw input frames per utterance
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  Stage stage = Stage::MultiCorpus;
  FreezePolicy freeze_policy = FreezePolicy::NonFrozen;
  // 0 = no expansion; 2 or 3 expand before single-corpus training.
  std::size_t expand_multiplier = 0;
  Selection selection = Selection::BestVal;
  std::size_t preservation_probes = 8;

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  std::string corpus_id;
  double loss = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  std::string corpus_id;
  double val_uar = 0.0;
};

struct TrainLog {
  std::vector<LossRecord> losses;
  std::vector<EvalRecord> evals;
  std::vector<std::pair<std::string, double>> wall_clock_s;  // per stage; kept out of CSVs
  std::size_t selected_step = 0;
  double preservation_max_abs = 0.0;

  std::string loss_csv() const;  // step,corpus,loss
  std::string eval_csv() const;  // step,corpus,val_uar
};

struct EvalResult {
  double uar = 0.0;
  ConfusionMatrix confusion;
  std::size_t n_samples = 0;
};

// Argmax predictions of every sample in one split.
std::vector<std::size_t> predict_split(const EncoderModel& model, const CorpusManifest& corpus,
                                       Split split);
EvalResult evaluate(const EncoderModel& model, const CorpusManifest& corpus, Split split);

// One optimizer step on one batch. Returns the mean cross-entropy.
double train_step(EncoderModel& model, const Batch& batch, const AdamWConfig& adamw);

struct TrainResult {
  EncoderModel model;
  TrainLog log;
};

// Stage 1: round-robin over corpora, one batch per step.
TrainResult train_multi(EncoderModel model, std::span<const CorpusManifest> corpora,
                        const TrainConfig& cfg);

// Stage 2: head reinitialized when the class count differs from the target's,
// optional expansion (with an exact preservation check), then single-corpus
// training. n_classes is the target label space.
TrainResult train_transfer(const EncoderModel& base, const CorpusManifest& target,
                           const TrainConfig& cfg, std::size_t n_classes = kNumSixClasses);

// Number of distinct classes needed to cover the corpus labels.
std::size_t class_count(const CorpusManifest& corpus);

}  // namespace bbe
