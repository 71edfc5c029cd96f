#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bbe/label_map.hpp"
#include "bbe/rng.hpp"
#include "bbe/tensor.hpp"

namespace bbe {

enum class Split { Train, Val, Test };

const char* to_string(Split split) noexcept;
Split parse_split(std::string_view s);

struct Sample {
  std::string feature_path;
  std::string raw_label;
  std::size_t mapped_class = 0;
  std::string speaker_id;  // empty when unknown
  std::string corpus_id;
  std::optional<Split> split;
  double duration_s = 0.0;
  Tensor frames;  // [n_frames, dim], filled when features are loaded
};

struct CorpusManifest {
  std::string corpus_id;
  std::vector<Sample> samples;
  std::string language;
  std::string notes;

  std::vector<std::size_t> indices(Split split) const;
  bool fully_split() const;
};

// Parses JSON-lines manifest text. Feature paths are resolved against
// base_dir; with load_features the FEAT files are read (missing or malformed
// files are Ingest errors). Labels go through `table`; all unmapped labels are
// reported together. Split disjointness is validated.
CorpusManifest parse_manifest(std::string_view jsonl, const std::string& corpus_id,
                              const MappingTable& table, const std::filesystem::path& base_dir,
                              bool load_features = true);
CorpusManifest load_manifest(const std::filesystem::path& path, const MappingTable& table,
                             const std::string& corpus_id = {}, bool load_features = true);

// Writes manifest.jsonl plus one FEAT file per sample under dir. Feature paths
// in the manifest are relative to dir.
void write_corpus(CorpusManifest& manifest, const std::filesystem::path& dir);
std::string manifest_jsonl(const CorpusManifest& manifest);

// Throws SplitViolation listing every speaker found in more than one split.
void validate_splits(const CorpusManifest& manifest);

struct CorpusSetEntry {
  std::string corpus_id;
  std::filesystem::path manifest_path;
  std::optional<std::filesystem::path> mapping_overrides_path;
};

std::vector<CorpusSetEntry> read_corpus_set(const std::filesystem::path& path);
void write_corpus_set(const std::vector<CorpusSetEntry>& entries, const std::filesystem::path& path);
std::vector<CorpusManifest> load_corpus_set(const std::filesystem::path& path,
                                            const MappingTable& base = MappingTable::defaults());

struct SplitOptions {
  double frac_test = 0.10;
  double frac_val = 0.10;
  std::uint64_t seed = 0;
};

// Speaker-level greedy split when every sample has a speaker id, sample-level
// random split when none has one.
CorpusManifest make_splits(CorpusManifest manifest, const SplitOptions& options);

// Corpus id used at step `step` of a cyclic schedule.
class RoundRobinSchedule {
 public:
  explicit RoundRobinSchedule(std::vector<std::string> corpora);
  const std::string& at(std::size_t step) const { return corpora_[step % corpora_.size()]; }
  std::size_t index_at(std::size_t step) const noexcept { return step % corpora_.size(); }
  std::size_t size() const noexcept { return corpora_.size(); }

 private:
  std::vector<std::string> corpora_;
};

std::vector<std::string> round_robin_schedule(const std::vector<std::string>& corpora,
                                              std::size_t n_steps);

// Endless iterator over one split of one corpus. Each epoch visits every
// sample exactly once in an order reshuffled from (seed, epoch).
class CorpusIterator {
 public:
  CorpusIterator(const CorpusManifest& manifest, Split split, std::uint64_t seed);

  std::size_t next();  // sample index into manifest.samples
  std::size_t epoch() const noexcept { return epoch_; }
  const CorpusManifest& manifest() const noexcept { return *manifest_; }

 private:
  void reshuffle();

  const CorpusManifest* manifest_;
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  std::uint64_t seed_;
};

struct Batch {
  Tensor features;                    // [B, T_max, d], zero padded
  std::vector<std::uint8_t> pad_mask;  // [B * T_max], 1 = real frame
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> labels;
  std::string corpus_id;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t max_frames() const noexcept { return features.rank() ? features.shape()[1] : 0; }
  // Unpadded frames of row b, [lengths[b], d].
  Tensor row_frames(std::size_t b) const;
  std::span<const std::uint8_t> row_mask(std::size_t b) const;
  // Padded frames of row b, [T_max, d].
  Tensor padded_row(std::size_t b) const;
};

Batch next_batch(CorpusIterator& it, std::size_t batch_size, std::size_t frame_cap);

struct SynthSpec {
  std::string corpus_id = "synth";
  std::size_t n_speakers = 5;
  std::size_t samples_per_speaker = 20;  // per class
  std::size_t n_classes = 6;
  std::size_t d = 32;
  std::uint64_t class_means_seed = 1;   // shared by corpora of one experiment
  double class_separation = 1.0;        // std of class-mean entries
  double speaker_std = 0.3;
  double noise_std = 1.0;
  double corpus_shift = 0.0;            // strength of the corpus affine map
  double frames_per_second = 4.0;
  double min_duration_s = 0.5;
  double max_duration_s = 5.0;
  std::uint64_t seed = 0;
  SplitOptions splits{};

  void validate() const;
};

// Raw label used by the generator for each six-class index.
const char* synthetic_label(std::size_t class_index);

// In-memory corpus with frames and speaker-level splits.
CorpusManifest generate_synthetic_corpus(const SynthSpec& spec);

// Nearest-class-mean classifier over mean-pooled frames; a reference oracle
// for the generator.
class NearestMeanClassifier {
 public:
  void fit(const CorpusManifest& manifest, Split split, std::size_t n_classes);
  std::size_t predict(const Tensor& frames) const;

 private:
  std::vector<std::vector<double>> means_;
  std::vector<bool> present_;
};

}  // namespace bbe
