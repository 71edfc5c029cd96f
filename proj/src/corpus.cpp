#include "bbe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bbe/error.hpp"
#include "bbe/io.hpp"
#include "json.hpp"

namespace bbe {

using nlohmann::json;

const char* to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Parse, "unknown split '" + std::string(s) + "'");
}

std::vector<std::size_t> CorpusManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

bool CorpusManifest::fully_split() const {
  return std::all_of(samples.begin(), samples.end(),
                     [](const Sample& s) { return s.split.has_value(); });
}

void validate_splits(const CorpusManifest& manifest) {
  std::map<std::string, std::set<Split>> seen;
  for (const auto& s : manifest.samples) {
    if (s.speaker_id.empty() || !s.split) continue;
    seen[s.speaker_id].insert(*s.split);
  }
  std::string offenders;
  for (const auto& [speaker, splits] : seen) {
    if (splits.size() < 2) continue;
    offenders += offenders.empty() ? "" : ", ";
    offenders += speaker + " (";
    bool first = true;
    for (Split sp : splits) {
      offenders += first ? "" : "/";
      offenders += to_string(sp);
      first = false;
    }
    offenders += ")";
  }
  if (!offenders.empty()) {
    fail(ErrorKind::SplitViolation,
         "corpus '" + manifest.corpus_id + "': speakers shared across splits: " + offenders);
  }
}

CorpusManifest parse_manifest(std::string_view jsonl, const std::string& corpus_id,
                              const MappingTable& table, const std::filesystem::path& base_dir,
                              bool load_features) {
  CorpusManifest m;
  m.corpus_id = corpus_id;
  std::set<std::string> unmapped;
  std::size_t line_no = 0, pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (normalize_label(line).empty()) continue;
    const std::string where =
        "manifest '" + corpus_id + "' line " + std::to_string(line_no) + ": ";

    Sample s;
    try {
      const json j = json::parse(line);
      s.feature_path = j.at("feature").get<std::string>();
      s.raw_label = j.at("label").get<std::string>();
      if (j.contains("speaker") && !j["speaker"].is_null()) s.speaker_id = j["speaker"].get<std::string>();
      if (j.contains("split") && !j["split"].is_null()) {
        s.split = parse_split(j["split"].get<std::string>());
      }
      s.duration_s = j.at("duration_s").get<double>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, where + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::Parse, where + e.what());
    }
    if (!(s.duration_s >= 0.0) || !std::isfinite(s.duration_s)) {
      fail(ErrorKind::Ingest, where + "negative or non-finite duration");
    }
    s.corpus_id = corpus_id;
    if (const auto* e = table.find(s.raw_label)) {
      s.mapped_class = e->cls.index();
    } else {
      unmapped.insert(s.raw_label);
    }
    std::filesystem::path feat = s.feature_path;
    if (feat.is_relative()) feat = base_dir / feat;
    if (!std::filesystem::exists(feat)) {
      fail(ErrorKind::Ingest, where + "missing feature file '" + feat.string() + "'");
    }
    if (load_features) {
      try {
        s.frames = read_feat(feat);
      } catch (const Error& e) {
        fail(ErrorKind::Ingest, where + e.what());
      }
      if (s.frames.shape()[0] == 0) fail(ErrorKind::Ingest, where + "feature file has no frames");
    }
    m.samples.push_back(std::move(s));
  }
  if (!unmapped.empty()) {
    std::string list;
    for (const auto& l : unmapped) list += (list.empty() ? "'" : ", '") + l + "'";
    fail(ErrorKind::Label, "corpus '" + corpus_id + "': unmapped labels: " + list);
  }
  validate_splits(m);
  return m;
}

CorpusManifest load_manifest(const std::filesystem::path& path, const MappingTable& table,
                             const std::string& corpus_id, bool load_features) {
  std::string id = corpus_id;
  if (id.empty()) {
    // <dir>/manifest.jsonl is named after its directory.
    id = path.stem() == "manifest" && path.has_parent_path() ? path.parent_path().filename().string()
                                                             : path.stem().string();
  }
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::Ingest, e.what());
  }
  return parse_manifest(text, id, table, path.parent_path(), load_features);
}

std::string manifest_jsonl(const CorpusManifest& manifest) {
  std::string out;
  for (const auto& s : manifest.samples) {
    json j = {{"feature", s.feature_path},
              {"label", s.raw_label},
              {"speaker", s.speaker_id},
              {"duration_s", s.duration_s}};
    if (s.split) j["split"] = to_string(*s.split);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_corpus(CorpusManifest& manifest, const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    auto& s = manifest.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "feats/%06zu.feat", i);
    s.feature_path = name;
    write_feat(dir / s.feature_path, s.frames);
  }
  write_file(dir / "manifest.jsonl", manifest_jsonl(manifest));
}

std::vector<CorpusSetEntry> read_corpus_set(const std::filesystem::path& path) {
  std::vector<CorpusSetEntry> out;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, "corpus set '" + path.string() + "': " + e.what());
  }
  try {
    for (const auto& e : j) {
      CorpusSetEntry entry;
      entry.corpus_id = e.at("corpus_id").get<std::string>();
      entry.manifest_path = e.at("manifest_path").get<std::string>();
      if (entry.manifest_path.is_relative()) entry.manifest_path = path.parent_path() / entry.manifest_path;
      if (e.contains("mapping_overrides_path") && !e["mapping_overrides_path"].is_null()) {
        std::filesystem::path p = e["mapping_overrides_path"].get<std::string>();
        entry.mapping_overrides_path = p.is_relative() ? path.parent_path() / p : p;
      }
      out.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, "corpus set '" + path.string() + "': " + e.what());
  }
  if (out.empty()) fail(ErrorKind::Config, "corpus set '" + path.string() + "' is empty");
  return out;
}

void write_corpus_set(const std::vector<CorpusSetEntry>& entries, const std::filesystem::path& path) {
  json j = json::array();
  for (const auto& e : entries) {
    json item = {{"corpus_id", e.corpus_id}, {"manifest_path", e.manifest_path.generic_string()}};
    if (e.mapping_overrides_path) item["mapping_overrides_path"] = e.mapping_overrides_path->generic_string();
    j.push_back(std::move(item));
  }
  write_file(path, j.dump(2) + "\n");
}

std::vector<CorpusManifest> load_corpus_set(const std::filesystem::path& path,
                                            const MappingTable& base) {
  std::vector<CorpusManifest> out;
  for (const auto& e : read_corpus_set(path)) {
    MappingTable table = base;
    if (e.mapping_overrides_path) table = load_mapping_table(*e.mapping_overrides_path, table);
    out.push_back(load_manifest(e.manifest_path, table, e.corpus_id));
  }
  return out;
}

CorpusManifest make_splits(CorpusManifest manifest, const SplitOptions& opt) {
  if (!(opt.frac_test > 0.0) || !(opt.frac_val > 0.0) || !(opt.frac_test + opt.frac_val < 1.0)) {
    fail(ErrorKind::Config, "split fractions must be > 0 and sum to < 1");
  }
  auto& samples = manifest.samples;
  const std::size_t n = samples.size();
  const std::size_t with_speaker = static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [](const Sample& s) { return !s.speaker_id.empty(); }));
  Rng rng(opt.seed);

  if (with_speaker == 0) {
    if (n < 3) fail(ErrorKind::Split, "need at least 3 samples to split");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span(order));
    auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.frac_test * n)));
    auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.frac_val * n)));
    if (n_test + n_val >= n) n_test = n_val = 1;
    for (std::size_t k = 0; k < n; ++k) {
      samples[order[k]].split = k < n_test ? Split::Test : k < n_test + n_val ? Split::Val : Split::Train;
    }
    return manifest;
  }
  if (with_speaker != n) {
    fail(ErrorKind::Split, "corpus '" + manifest.corpus_id +
                               "' mixes samples with and without speaker ids");
  }

  // Speakers in first-appearance order, then seeded shuffle, then largest first.
  std::vector<std::string> speakers;
  std::map<std::string, std::size_t> sizes;
  for (const auto& s : samples) {
    if (sizes[s.speaker_id]++ == 0) speakers.push_back(s.speaker_id);
  }
  if (speakers.size() < 3) {
    fail(ErrorKind::Split, "corpus '" + manifest.corpus_id + "' has " +
                               std::to_string(speakers.size()) +
                               " speaker(s); speaker-level splitting needs at least 3");
  }
  rng.shuffle(std::span(speakers));
  std::stable_sort(speakers.begin(), speakers.end(), [&](const auto& a, const auto& b) {
    return sizes[a] > sizes[b];
  });

  const double target_test = opt.frac_test * static_cast<double>(n);
  const double target_val = opt.frac_val * static_cast<double>(n);
  double cur_test = 0, cur_val = 0;
  std::map<std::string, Split> assign;
  for (const auto& spk : speakers) {
    const double size = static_cast<double>(sizes[spk]);
    const double dt = target_test - cur_test;
    const double dv = target_val - cur_val;
    // Join the partition with the larger deficit when that moves it closer
    // to its target.
    if (dt >= dv && dt > size / 2) {
      assign[spk] = Split::Test;
      cur_test += size;
    } else if (dv > dt && dv > size / 2) {
      assign[spk] = Split::Val;
      cur_val += size;
    } else {
      assign[spk] = Split::Train;
    }
  }
  auto members = [&](Split sp) {
    std::vector<std::string> out;
    for (const auto& spk : speakers) {
      if (assign[spk] == sp) out.push_back(spk);
    }
    return out;
  };
  // Every partition gets at least one speaker. The smallest train speaker is
  // donated to an empty test/val partition.
  for (Split sp : {Split::Test, Split::Val}) {
    if (members(sp).empty()) assign[members(Split::Train).back()] = sp;
  }
  if (members(Split::Train).empty()) {
    const auto test = members(Split::Test);
    const auto val = members(Split::Val);
    const auto& donor = test.size() >= val.size() ? test : val;
    assign[donor.back()] = Split::Train;
  }
  for (auto& s : samples) s.split = assign[s.speaker_id];
  validate_splits(manifest);
  return manifest;
}

RoundRobinSchedule::RoundRobinSchedule(std::vector<std::string> corpora)
    : corpora_(std::move(corpora)) {
  if (corpora_.empty()) fail(ErrorKind::Config, "round-robin schedule needs at least one corpus");
}

std::vector<std::string> round_robin_schedule(const std::vector<std::string>& corpora,
                                              std::size_t n_steps) {
  RoundRobinSchedule sched(corpora);
  std::vector<std::string> out;
  out.reserve(n_steps);
  for (std::size_t s = 0; s < n_steps; ++s) out.push_back(sched.at(s));
  return out;
}

CorpusIterator::CorpusIterator(const CorpusManifest& manifest, Split split, std::uint64_t seed)
    : manifest_(&manifest), pool_(manifest.indices(split)), seed_(seed) {
  if (pool_.empty()) {
    fail(ErrorKind::Input, "corpus '" + manifest.corpus_id + "' has no " + to_string(split) +
                               " samples");
  }
  reshuffle();
}

void CorpusIterator::reshuffle() {
  order_ = pool_;
  Rng(seed_).fork(epoch_).shuffle(std::span(order_));
  pos_ = 0;
}

std::size_t CorpusIterator::next() {
  if (pos_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  return order_[pos_++];
}

Tensor Batch::row_frames(std::size_t b) const {
  const std::size_t T = max_frames(), d = features.shape()[2], len = lengths[b];
  std::vector<double> data(features.raw().begin() + static_cast<std::ptrdiff_t>(b * T * d),
                           features.raw().begin() + static_cast<std::ptrdiff_t>((b * T + len) * d));
  return Tensor({len, d}, std::move(data));
}

Tensor Batch::padded_row(std::size_t b) const {
  const std::size_t T = max_frames(), d = features.shape()[2];
  std::vector<double> data(features.raw().begin() + static_cast<std::ptrdiff_t>(b * T * d),
                           features.raw().begin() + static_cast<std::ptrdiff_t>((b + 1) * T * d));
  return Tensor({T, d}, std::move(data));
}

std::span<const std::uint8_t> Batch::row_mask(std::size_t b) const {
  const std::size_t T = max_frames();
  return {pad_mask.data() + b * T, T};
}

Batch next_batch(CorpusIterator& it, std::size_t batch_size, std::size_t frame_cap) {
  if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
  if (frame_cap < 1) fail(ErrorKind::Config, "frame_cap must be >= 1");
  const auto& m = it.manifest();
  std::vector<std::size_t> picks(batch_size);
  for (auto& p : picks) p = it.next();

  Batch batch;
  batch.corpus_id = m.corpus_id;
  std::size_t T_max = 0, d = 0;
  for (std::size_t p : picks) {
    const Tensor& f = m.samples[p].frames;
    if (f.rank() != 2) fail(ErrorKind::State, "sample features not loaded");
    if (d == 0) d = f.shape()[1];
    if (f.shape()[1] != d) fail(ErrorKind::Input, "inconsistent feature dims within a corpus");
    batch.lengths.push_back(std::min(f.shape()[0], frame_cap));
    batch.labels.push_back(m.samples[p].mapped_class);
    T_max = std::max(T_max, batch.lengths.back());
  }
  batch.features = Tensor({batch_size, T_max, d});
  batch.pad_mask.assign(batch_size * T_max, 0);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Tensor& f = m.samples[picks[b]].frames;
    std::copy_n(f.raw().begin(), batch.lengths[b] * d,
                batch.features.raw().begin() + static_cast<std::ptrdiff_t>(b * T_max * d));
    std::fill_n(batch.pad_mask.begin() + static_cast<std::ptrdiff_t>(b * T_max), batch.lengths[b], 1);
  }
  return batch;
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::Config, "synthetic corpus: " + msg); };
  if (n_speakers < 3) bad("n_speakers must be >= 3");
  if (samples_per_speaker < 1) bad("samples_per_speaker must be >= 1");
  if (n_classes < 2 || n_classes > kNumSixClasses) bad("n_classes must lie in [2, 6]");
  if (d < 1) bad("d must be >= 1");
  if (!(noise_std >= 0.0)) bad("noise_std must be >= 0");
  if (!(speaker_std >= 0.0)) bad("speaker_std must be >= 0");
  if (!(class_separation > 0.0)) bad("class_separation must be > 0");
  if (!(frames_per_second > 0.0)) bad("frames_per_second must be > 0");
  if (!(min_duration_s > 0.0) || !(max_duration_s >= min_duration_s)) bad("bad duration range");
}

const char* synthetic_label(std::size_t class_index) {
  static constexpr const char* kLabels[] = {"sadness", "neutral",  "calm",
                                            "anger",   "surprise", "happiness"};
  if (class_index >= kNumSixClasses) fail(ErrorKind::Label, "class index out of range");
  return kLabels[class_index];
}

CorpusManifest generate_synthetic_corpus(const SynthSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d;

  Rng means_rng(spec.class_means_seed);
  std::vector<std::vector<double>> means(spec.n_classes, std::vector<double>(d));
  for (auto& mu : means) {
    for (auto& v : mu) v = spec.class_separation * means_rng.normal();
  }

  const Rng root(spec.seed);
  // Corpus-level affine map x -> (I + s R) x + s u.
  Rng affine_rng = root.fork(1);
  std::vector<double> A(d * d, 0.0), shift_vec(d, 0.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      A[i * d + j] = (i == j ? 1.0 : 0.0) + spec.corpus_shift * inv_sqrt_d * affine_rng.normal();
    }
  }
  for (auto& v : shift_vec) v = spec.corpus_shift * spec.class_separation * affine_rng.normal();

  Rng speaker_rng = root.fork(2);
  std::vector<std::vector<double>> offsets(spec.n_speakers, std::vector<double>(d));
  for (auto& off : offsets) {
    for (auto& v : off) v = spec.speaker_std * speaker_rng.normal();
  }

  Rng sample_rng = root.fork(3);
  CorpusManifest m;
  m.corpus_id = spec.corpus_id;
  m.language = "synthetic";
  m.notes = "generated";
  std::vector<double> x(d);
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    const std::string speaker = spec.corpus_id + "-spk" + std::to_string(s);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
      for (std::size_t k = 0; k < spec.samples_per_speaker; ++k) {
        Sample sample;
        sample.corpus_id = spec.corpus_id;
        sample.speaker_id = speaker;
        sample.raw_label = synthetic_label(c);
        sample.mapped_class = c;
        sample.duration_s = sample_rng.uniform(spec.min_duration_s, spec.max_duration_s);
        const auto frames = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(sample.duration_s * spec.frames_per_second)));
        sample.frames = Tensor({frames, d});
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t j = 0; j < d; ++j) {
            x[j] = means[c][j] + offsets[s][j] + spec.noise_std * sample_rng.normal();
          }
          for (std::size_t i = 0; i < d; ++i) {
            double y = shift_vec[i];
            for (std::size_t j = 0; j < d; ++j) y += A[i * d + j] * x[j];
            // Stored as f32 in FEAT files; keep memory and disk identical.
            sample.frames.at(t, i) = static_cast<double>(static_cast<float>(y));
          }
        }
        m.samples.push_back(std::move(sample));
      }
    }
  }
  SplitOptions so = spec.splits;
  so.seed = Rng(spec.seed).fork(4).next_u64() ^ spec.splits.seed;
  return make_splits(std::move(m), so);
}

void NearestMeanClassifier::fit(const CorpusManifest& manifest, Split split,
                                std::size_t n_classes) {
  means_.assign(n_classes, {});
  present_.assign(n_classes, false);
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t idx : manifest.indices(split)) {
    const auto& s = manifest.samples[idx];
    const Tensor& f = s.frames;
    const std::size_t d = f.cols();
    auto& mu = means_.at(s.mapped_class);
    if (mu.empty()) mu.assign(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
      double sum = 0.0;
      for (std::size_t t = 0; t < f.rows(); ++t) sum += f.at(t, c);
      mu[c] += sum / static_cast<double>(f.rows());
    }
    counts[s.mapped_class] += 1;
    present_[s.mapped_class] = true;
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (auto& v : means_[k]) v /= static_cast<double>(std::max<std::size_t>(1, counts[k]));
  }
}

std::size_t NearestMeanClassifier::predict(const Tensor& frames) const {
  const std::size_t d = frames.cols();
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    for (std::size_t c = 0; c < d; ++c) pooled[c] += frames.at(t, c);
  }
  for (auto& v : pooled) v /= static_cast<double>(frames.rows());
  std::size_t best = 0;
  double best_dist = INFINITY;
  for (std::size_t k = 0; k < means_.size(); ++k) {
    if (!present_[k]) continue;
    double dist = 0.0;
    for (std::size_t c = 0; c < d; ++c) dist += (pooled[c] - means_[k][c]) * (pooled[c] - means_[k][c]);
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

}  // namespace bbe
