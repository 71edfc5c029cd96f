#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "bbe/corpus.hpp"
#include "bbe/io.hpp"
#include "bbe/metrics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace bbe;

namespace {

// Writes n FEAT files f0.feat.. of shape [3, 2] into dir.
void write_feats(const std::filesystem::path& dir, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    write_feat(dir / ("f" + std::to_string(i) + ".feat"), Tensor({3, 2}, static_cast<double>(i)));
  }
}

std::string line(std::size_t feat, const std::string& label, const std::string& speaker,
                 const std::string& split, double dur = 1.0) {
  std::string s = "{\"feature\": \"f" + std::to_string(feat) + ".feat\", \"label\": \"" + label +
                  "\", \"duration_s\": " + std::to_string(dur);
  if (!speaker.empty()) s += ", \"speaker\": \"" + speaker + "\"";
  if (!split.empty()) s += ", \"split\": \"" + split + "\"";
  return s + "}\n";
}

CorpusManifest speakers_only(std::size_t speakers, std::size_t per_speaker) {
  CorpusManifest m;
  m.corpus_id = "c";
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t i = 0; i < per_speaker; ++i) {
      Sample x;
      x.speaker_id = "spk" + std::to_string(s);
      x.corpus_id = "c";
      m.samples.push_back(x);
    }
  }
  return m;
}

// Each sample's frames hold its own index so batches can be traced back.
CorpusManifest indexed_corpus(const std::vector<std::size_t>& lengths,
                              const std::vector<std::size_t>& labels) {
  CorpusManifest m;
  m.corpus_id = "idx";
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    Sample s;
    s.frames = Tensor({lengths[i], 2}, static_cast<double>(i + 1));
    s.mapped_class = labels[i];
    s.split = Split::Train;
    s.corpus_id = m.corpus_id;
    m.samples.push_back(s);
  }
  return m;
}

}  // namespace

TEST_CASE("manifest with one sample per split loads clean") {
  const auto dir = test::scratch_dir("manifest_ok");
  write_feats(dir, 3);
  const std::string text = line(0, "Anger", "a", "train", 0.75) + line(1, "calm", "b", "val") +
                           line(2, "neutral", "c", "test");
  const auto m = parse_manifest(text, "demo", MappingTable::defaults(), dir);
  REQUIRE(m.samples.size() == 3);
  CHECK(m.corpus_id == "demo");
  CHECK(m.samples[0].mapped_class == 3);
  CHECK(m.samples[0].raw_label == "Anger");
  CHECK(m.samples[0].duration_s == 0.75);
  CHECK(m.samples[1].split == Split::Val);
  CHECK(m.samples[2].frames.shape() == Shape{3, 2});
  CHECK(m.samples[2].frames[0] == 2.0);
  CHECK(m.fully_split());
  CHECK(m.indices(Split::Test) == std::vector<std::size_t>{2});

  write_file(dir / "manifest.jsonl", text);
  CHECK(load_manifest(dir / "manifest.jsonl", MappingTable::defaults()).corpus_id ==
        dir.filename().string());
  write_file(dir / "named.jsonl", text);
  CHECK(load_manifest(dir / "named.jsonl", MappingTable::defaults()).corpus_id == "named");
  CHECK(test::error_kind([&] { load_manifest(dir / "nope.jsonl", MappingTable::defaults()); }) ==
        ErrorKind::Ingest);
}

TEST_CASE("manifest errors") {
  const auto dir = test::scratch_dir("manifest_bad");
  write_feats(dir, 3);
  const auto table = MappingTable::defaults();
  auto parse = [&](const std::string& text) { return parse_manifest(text, "bad", table, dir); };

  const std::string overlap = line(0, "anger", "alice", "train") + line(1, "anger", "bob", "val") +
                              line(2, "anger", "alice", "test");
  CHECK(test::error_kind([&] { parse(overlap); }) == ErrorKind::SplitViolation);
  CHECK(test::error_text([&] { parse(overlap); }).find("alice") != std::string::npos);
  CHECK(test::error_text([&] { parse(overlap); }).find("bob") == std::string::npos);

  const std::string missing = line(0, "anger", "a", "train") + line(7, "anger", "b", "test");
  CHECK(test::error_kind([&] { parse(missing); }) == ErrorKind::Ingest);

  const std::string labels = line(0, "zork", "a", "") + line(1, "anger", "b", "") + line(2, "blip", "c", "");
  CHECK(test::error_kind([&] { parse(labels); }) == ErrorKind::Label);
  const auto msg = test::error_text([&] { parse(labels); });
  CHECK(msg.find("zork") != std::string::npos);
  CHECK(msg.find("blip") != std::string::npos);

  const std::string broken = line(0, "anger", "a", "") + "{\"feature\": \n";
  CHECK(test::error_kind([&] { parse(broken); }) == ErrorKind::Parse);
  CHECK(test::error_text([&] { parse(broken); }).find("line 2") != std::string::npos);
  CHECK(test::error_kind([&] { parse("{\"label\": \"anger\", \"duration_s\": 1}\n"); }) ==
        ErrorKind::Parse);
  CHECK(test::error_kind([&] { parse(line(0, "anger", "a", "holdout")); }) == ErrorKind::Parse);
  CHECK(test::error_kind([&] { parse(line(0, "anger", "a", "", -1.0)); }) == ErrorKind::Ingest);

  // Existence is checked even when frames are not read.
  CHECK(test::error_kind([&] { parse_manifest(missing, "x", table, dir, false); }) == ErrorKind::Ingest);
  const auto lazy = parse_manifest(line(0, "anger", "a", ""), "x", table, dir, false);
  CHECK(lazy.samples[0].frames.numel() == 0);
}

TEST_CASE("speaker-level splits") {
  const auto m = make_splits(speakers_only(10, 10), {0.1, 0.1, 3});
  std::map<Split, std::set<std::string>> by_split;
  for (const auto& s : m.samples) by_split[*s.split].insert(s.speaker_id);
  CHECK(by_split[Split::Test].size() == 1);
  CHECK(by_split[Split::Val].size() == 1);
  CHECK(by_split[Split::Train].size() == 8);
  CHECK_NOTHROW(validate_splits(m));

  // Greedy oracle on uneven sizes: never more than one speaker past the target.
  CorpusManifest uneven;
  for (std::size_t s = 0; s < 12; ++s) {
    for (std::size_t i = 0; i < 3 + s; ++i) {
      Sample x;
      x.speaker_id = "s" + std::to_string(s);
      uneven.samples.push_back(x);
    }
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto u = make_splits(uneven, {0.2, 0.15, seed});
    CHECK_NOTHROW(validate_splits(u));
    CHECK_FALSE(u.indices(Split::Train).empty());
    CHECK_FALSE(u.indices(Split::Val).empty());
    CHECK_FALSE(u.indices(Split::Test).empty());
  }

  CHECK(test::error_kind([] { make_splits(speakers_only(1, 10), {}); }) == ErrorKind::Split);
  CHECK(test::error_kind([] { make_splits(speakers_only(2, 10), {}); }) == ErrorKind::Split);
  auto mixed = speakers_only(5, 2);
  mixed.samples[3].speaker_id.clear();
  CHECK(test::error_kind([&] { make_splits(mixed, {}); }) == ErrorKind::Split);
  CHECK(test::error_kind([] { make_splits(speakers_only(5, 2), {0.6, 0.5, 0}); }) == ErrorKind::Config);
  CHECK(test::error_kind([] { make_splits(speakers_only(5, 2), {0.0, 0.1, 0}); }) == ErrorKind::Config);
}

TEST_CASE("sample-level splits without speakers") {
  auto m = speakers_only(1, 100);
  for (auto& s : m.samples) s.speaker_id.clear();
  const auto split = make_splits(m, {0.1, 0.1, 0});
  CHECK(split.indices(Split::Test).size() == 10);
  CHECK(split.indices(Split::Val).size() == 10);
  CHECK(split.indices(Split::Train).size() == 80);
  CHECK(make_splits(m, {0.1, 0.1, 0}).indices(Split::Test) == split.indices(Split::Test));
}

TEST_CASE("round-robin schedule") {
  CHECK(round_robin_schedule({"A", "B", "C"}, 6) ==
        std::vector<std::string>{"A", "B", "C", "A", "B", "C"});
  CHECK(round_robin_schedule({"A"}, 3) == std::vector<std::string>{"A", "A", "A"});
  CHECK(test::error_kind([] { round_robin_schedule({}, 3); }) == ErrorKind::Config);

  std::vector<std::string> ids;
  for (int i = 0; i < 26; ++i) ids.push_back("c" + std::to_string(i));
  const auto sched = round_robin_schedule(ids, 3000);
  std::map<std::string, std::size_t> counts;
  for (const auto& id : sched) ++counts[id];
  CHECK(counts.size() == 26);
  for (const auto& [id, n] : counts) CHECK((n == 3000 / 26 || n == 3000 / 26 + 1));

  // Fairness holds at every prefix.
  std::vector<std::size_t> running(26, 0);
  RoundRobinSchedule rr(ids);
  for (std::size_t step = 0; step < 200; ++step) {
    ++running[rr.index_at(step)];
    const auto [lo, hi] = std::minmax_element(running.begin(), running.end());
    CHECK(*hi - *lo <= 1);
  }
}

TEST_CASE("iterator visits every sample once per epoch") {
  const auto m = indexed_corpus({1, 2, 3, 4, 5, 6, 7}, {0, 0, 1, 1, 2, 2, 3});
  CorpusIterator it(m, Split::Train, 11);
  std::vector<std::size_t> first, second;
  for (int i = 0; i < 7; ++i) first.push_back(it.next());
  for (int i = 0; i < 7; ++i) second.push_back(it.next());
  CHECK(it.epoch() >= 1);
  CHECK(std::set<std::size_t>(first.begin(), first.end()).size() == 7);
  CHECK(std::set<std::size_t>(second.begin(), second.end()).size() == 7);
  CHECK(first != second);

  CorpusIterator again(m, Split::Train, 11);
  for (std::size_t i : first) CHECK(again.next() == i);
  CHECK(test::error_kind([&] { CorpusIterator(m, Split::Test, 0); }) == ErrorKind::Input);
}

TEST_CASE("batches pad, mask and truncate") {
  const auto m = indexed_corpus({3, 5}, {0, 1});
  CorpusIterator it(m, Split::Train, 0);
  const auto b = next_batch(it, 2, 512);
  CHECK(b.max_frames() == 5);
  const std::size_t short_row = b.lengths[0] == 3 ? 0 : 1;
  const auto mask = b.row_mask(short_row);
  CHECK(std::count(mask.begin(), mask.end(), 0) == 2);
  CHECK(mask[3] == 0);
  CHECK(mask[4] == 0);
  CHECK(b.row_frames(short_row).shape() == Shape{3, 2});
  const auto padded = b.padded_row(short_row);
  for (std::size_t i = 6; i < 10; ++i) CHECK(padded[i] == 0.0);

  CorpusIterator it2(m, Split::Train, 0);
  const auto capped = next_batch(it2, 2, 4);
  CHECK(capped.max_frames() == 4);
  for (std::size_t len : capped.lengths) CHECK(len <= 4);

  // Larger than the corpus: wraps, no repeats before exhaustion.
  const auto big = indexed_corpus({1, 1, 1}, {0, 1, 2});
  CorpusIterator it3(big, Split::Train, 5);
  const auto wrapped = next_batch(it3, 5, 8);
  CHECK(wrapped.size() == 5);
  std::set<double> head;
  for (std::size_t r = 0; r < 3; ++r) head.insert(wrapped.row_frames(r)[0]);
  CHECK(head.size() == 3);

  CHECK(test::error_kind([&] { next_batch(it3, 0, 8); }) == ErrorKind::Config);
  CHECK(test::error_kind([&] { next_batch(it3, 1, 0); }) == ErrorKind::Config);
}

TEST_CASE("batches do not rebalance classes") {
  // 60% class 0, 30% class 1, 10% class 2.
  std::vector<std::size_t> lengths(50, 1), labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i < 30 ? 0 : i < 45 ? 1 : 2);
  const auto m = indexed_corpus(lengths, labels);
  CorpusIterator it(m, Split::Train, 1);
  std::vector<std::size_t> counts(3, 0);
  const std::size_t n_batches = 400, bs = 7;
  for (std::size_t i = 0; i < n_batches; ++i) {
    for (std::size_t y : next_batch(it, bs, 8).labels) ++counts[y];
  }
  const double n = static_cast<double>(n_batches * bs);
  const double expected[] = {0.6, 0.3, 0.1};
  for (int c = 0; c < 3; ++c) {
    const double sd = std::sqrt(expected[c] * (1 - expected[c]) / n);
    CHECK(std::abs(counts[c] / n - expected[c]) < 4 * sd);
  }
}

TEST_CASE("synthetic generator arithmetic and determinism") {
  SynthSpec spec;
  spec.seed = 4;
  const auto m = generate_synthetic_corpus(spec);
  CHECK(m.samples.size() == 600);
  std::vector<std::size_t> per_class(6, 0);
  for (const auto& s : m.samples) {
    ++per_class[s.mapped_class];
    CHECK(s.duration_s >= 0.5);
    CHECK(s.duration_s <= 5.0);
    CHECK(s.frames.shape()[1] == 32);
    CHECK(map_emotion(s.raw_label, MappingTable::defaults()).index() == s.mapped_class);
  }
  for (std::size_t n : per_class) CHECK(n == 100);
  CHECK_NOTHROW(validate_splits(m));
  CHECK(m.fully_split());

  const auto a = test::scratch_dir("synth_a");
  const auto b = test::scratch_dir("synth_b");
  auto m1 = generate_synthetic_corpus(spec);
  auto m2 = generate_synthetic_corpus(spec);
  write_corpus(m1, a);
  write_corpus(m2, b);
  CHECK(read_file(a / "manifest.jsonl") == read_file(b / "manifest.jsonl"));
  for (const auto& s : m1.samples) {
    CHECK(read_file(a / s.feature_path) == read_file(b / s.feature_path));
  }
  const auto back = load_manifest(a / "manifest.jsonl", MappingTable::defaults(), "synth");
  REQUIRE(back.samples.size() == m1.samples.size());
  for (std::size_t i = 0; i < back.samples.size(); i += 37) {
    CHECK(back.samples[i].frames.bit_equal(m1.samples[i].frames));
    CHECK(back.samples[i].split == m1.samples[i].split);
  }

  spec.noise_std = -1;
  CHECK(test::error_kind([&] { generate_synthetic_corpus(spec); }) == ErrorKind::Config);
  spec.noise_std = 1;
  spec.n_speakers = 2;
  CHECK(test::error_kind([&] { generate_synthetic_corpus(spec); }) == ErrorKind::Config);
}

TEST_CASE("noiseless synthetic corpora are separable by nearest mean") {
  SynthSpec spec;
  spec.noise_std = 0.0;
  spec.corpus_shift = 0.5;
  spec.seed = 2;
  const auto m = generate_synthetic_corpus(spec);
  NearestMeanClassifier nm;
  nm.fit(m, Split::Train, 6);
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    std::vector<std::size_t> preds, labels;
    for (std::size_t i : m.indices(split)) {
      preds.push_back(nm.predict(m.samples[i].frames));
      labels.push_back(m.samples[i].mapped_class);
    }
    CHECK(uar(confusion(preds, labels, 6)) == 1.0);
  }
}

TEST_CASE("corpus shift opens a domain gap for a nearest-mean oracle") {
  SynthSpec a;
  a.corpus_id = "a";
  a.seed = 1;
  a.noise_std = 2.0;
  SynthSpec b = a;
  b.corpus_id = "b";
  b.seed = 2;
  b.corpus_shift = 1.5;
  const auto ma = generate_synthetic_corpus(a);
  const auto mb = generate_synthetic_corpus(b);
  NearestMeanClassifier nm;
  nm.fit(ma, Split::Train, 6);
  auto score = [&](const CorpusManifest& m) {
    std::vector<std::size_t> preds, labels;
    for (std::size_t i : m.indices(Split::Test)) {
      preds.push_back(nm.predict(m.samples[i].frames));
      labels.push_back(m.samples[i].mapped_class);
    }
    return uar(confusion(preds, labels, 6));
  };
  CHECK(score(mb) < score(ma));
}

TEST_CASE("corpus set files") {
  const auto dir = test::scratch_dir("corpus_set");
  auto m = generate_synthetic_corpus(test::small_synth("one", 1));
  write_corpus(m, dir / "one");
  std::ofstream(dir / "map.csv") << "zz,high,neutral\n";
  write_corpus_set({{"one", "one/manifest.jsonl", std::filesystem::path("map.csv")}}, dir / "set.json");
  const auto entries = read_corpus_set(dir / "set.json");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].corpus_id == "one");
  CHECK(entries[0].mapping_overrides_path.has_value());
  const auto loaded = load_corpus_set(dir / "set.json");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].corpus_id == "one");
  CHECK(loaded[0].samples.size() == m.samples.size());

  write_file(dir / "empty.json", "[]");
  CHECK(test::error_kind([&] { read_corpus_set(dir / "empty.json"); }) == ErrorKind::Config);
  write_file(dir / "junk.json", "{");
  CHECK(test::error_kind([&] { read_corpus_set(dir / "junk.json"); }) == ErrorKind::Parse);
}
