// bbe: command-line driver for the two-stage pipeline.
//
//   synth-data -> train -> expand -> finetune -> eval -> report
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 invariant violation,
// 5 numerical abort.

#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "bbe/config_json.hpp"
#include "bbe/corpus.hpp"
#include "bbe/error.hpp"
#include "bbe/expansion.hpp"
#include "bbe/gradcheck.hpp"
#include "bbe/io.hpp"
#include "bbe/metrics.hpp"
#include "bbe/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bbe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInvariant = 4;
constexpr int kExitNumerical = 5;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Dimension:
    case ErrorKind::State:
      return kExitConfig;
    case ErrorKind::Invariant:
      return kExitInvariant;
    case ErrorKind::Numerical:
      return kExitNumerical;
    default:
      return kExitData;
  }
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed (overrides train.seed and synth.seed)");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--set", c.overrides, "Config override key.path=value (repeatable)");
}

struct RunConfig {
  json doc;
  EncoderConfig encoder;
  TrainConfig train;
  SynthSpec synth;
  ExpansionSpec expansion;
};

json default_config() {
  return {{"encoder", EncoderConfig{}},
          {"train", TrainConfig{}},
          {"synth", SynthSpec{}},
          {"expansion", ExpansionSpec{}}};
}

RunConfig resolve_config(const Common& c) {
  json doc = default_config();
  if (!c.config_path.empty()) {
    json file;
    try {
      file = json::parse(read_file(c.config_path));
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, "config file '" + c.config_path + "': " + e.what());
    }
    if (!file.is_object()) fail(ErrorKind::Config, "config file must hold a JSON object");
    for (const auto& [key, _] : file.items()) {
      if (!doc.contains(key)) fail(ErrorKind::Config, "unknown config section '" + key + "'");
    }
    doc.merge_patch(file);
  }
  apply_overrides(doc, c.overrides);
  if (c.seed) {
    doc["train"]["seed"] = *c.seed;
    doc["synth"]["seed"] = *c.seed;
  }
  RunConfig r;
  r.encoder = config_from_json<EncoderConfig>(doc["encoder"], "encoder");
  r.train = config_from_json<TrainConfig>(doc["train"], "train");
  r.synth = config_from_json<SynthSpec>(doc["synth"], "synth");
  r.expansion = config_from_json<ExpansionSpec>(doc["expansion"], "expansion");
  r.doc = std::move(doc);
  return r;
}

fs::path prepare_out(const std::string& out) {
  fs::path p(out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory '" + out + "': " + ec.message());
  return p;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// Timestamps and host info are confined to this sidecar.
void write_run_meta(const fs::path& dir, const std::string& command, double seconds) {
  char host[256] = {};
  gethostname(host, sizeof host - 1);
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_json(dir / "run.meta",
             {{"command", command}, {"finished_utc", stamp}, {"host", host}, {"wall_clock_s", seconds}});
}

void check_input_dim(const EncoderModel& model, const CorpusManifest& corpus) {
  for (const auto& s : corpus.samples) {
    if (s.frames.cols() != model.config.input_dim) {
      fail(ErrorKind::Config, fmt::format("corpus '{}' has {}-dim features but the encoder expects {}",
                                          corpus.corpus_id, s.frames.cols(), model.config.input_dim));
    }
  }
}

json eval_json(const EvalResult& r) {
  json rows = json::array();
  for (std::size_t t = 0; t < r.confusion.n_classes; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < r.confusion.n_classes; ++p) row.push_back(r.confusion.at(t, p));
    rows.push_back(std::move(row));
  }
  return {{"uar", r.uar}, {"n_samples", r.n_samples}, {"confusion", rows}};
}

void write_train_outputs(const fs::path& dir, const TrainResult& r, const json& extra) {
  save_checkpoint(r.model, dir / "model.bbex");
  write_file(dir / "loss.csv", r.log.loss_csv());
  write_file(dir / "val.csv", r.log.eval_csv());
  json summary = extra;
  summary["selected_step"] = r.log.selected_step;
  summary["checkpoint_sha1"] = git_blob_hash(read_file(dir / "model.bbex"));
  write_json(dir / "summary.json", summary);
}

// ---- commands --------------------------------------------------------------

struct SynthArgs {
  std::size_t corpora = 3;
  std::optional<std::size_t> speakers;
  std::optional<std::size_t> samples_per_speaker;
  std::optional<double> noise_std;
  std::optional<double> shift;
  std::optional<double> target_shift;
  std::optional<double> target_noise_std;
  std::optional<std::size_t> target_speakers;
  double bin_width = 0.5;
};

int cmd_synth(const Common& c, const SynthArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = resolve_config(c);
  SynthSpec base = rc.synth;
  if (a.speakers) base.n_speakers = *a.speakers;
  if (a.samples_per_speaker) base.samples_per_speaker = *a.samples_per_speaker;
  if (a.noise_std) base.noise_std = *a.noise_std;
  if (a.shift) base.corpus_shift = *a.shift;
  if (a.corpora < 1) fail(ErrorKind::Config, "--corpora must be >= 1");
  base.validate();
  const fs::path out = prepare_out(c.out);
  const Rng root(base.seed);

  std::vector<CorpusManifest> all;
  std::vector<CorpusSetEntry> sources;
  json specs = json::array();
  auto make = [&](SynthSpec spec, std::uint64_t salt) {
    spec.seed = root.fork(salt).next_u64();
    spec.splits.seed = spec.seed;
    CorpusManifest m = generate_synthetic_corpus(spec);
    write_corpus(m, out / spec.corpus_id);
    specs.push_back(spec);
    all.push_back(std::move(m));
    return CorpusSetEntry{spec.corpus_id, fs::path(spec.corpus_id) / "manifest.jsonl", std::nullopt};
  };
  for (std::size_t i = 0; i < a.corpora; ++i) {
    SynthSpec spec = base;
    spec.corpus_id = fmt::format("{}{}", base.corpus_id, i);
    sources.push_back(make(spec, i + 1));
  }
  write_corpus_set(sources, out / "corpora.json");
  if (a.target_shift) {
    SynthSpec spec = base;
    spec.corpus_id = "target";
    spec.corpus_shift = *a.target_shift;
    if (a.target_noise_std) spec.noise_std = *a.target_noise_std;
    if (a.target_speakers) spec.n_speakers = *a.target_speakers;
    write_corpus_set({make(spec, 1000)}, out / "target.json");
  }

  const DurationHistogram h = duration_histogram(std::span<const CorpusManifest>(all), a.bin_width);
  write_file(out / "durations.csv", h.csv());
  json cfg = rc.doc;
  cfg["corpora"] = specs;
  write_json(out / "config.json", cfg);
  for (const auto& m : all) {
    fmt::print("{}: {} samples (train {}, val {}, test {})\n", m.corpus_id, m.samples.size(),
               m.indices(Split::Train).size(), m.indices(Split::Val).size(),
               m.indices(Split::Test).size());
  }
  fmt::print("durations:\n{}", h.text());
  write_run_meta(out, "synth-data",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return kExitOk;
}

struct TrainArgs {
  std::string corpora;
  std::string init;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = resolve_config(c);
  rc.train.stage = Stage::MultiCorpus;
  const auto corpora = load_corpus_set(a.corpora);
  EncoderModel model = a.init.empty() ? build_model(rc.encoder, rc.train.seed) : load_checkpoint(a.init);
  for (const auto& m : corpora) check_input_dim(model, m);
  const fs::path out = prepare_out(c.out);

  const TrainResult r = train_multi(std::move(model), corpora, rc.train);
  json final_metrics;
  for (const auto& m : corpora) {
    final_metrics[m.corpus_id] = {{"val_uar", evaluate(r.model, m, Split::Val).uar},
                                  {"test_uar", evaluate(r.model, m, Split::Test).uar}};
    fmt::print("{}: val UAR {:.4f}, test UAR {:.4f}\n", m.corpus_id,
               final_metrics[m.corpus_id]["val_uar"].get<double>(),
               final_metrics[m.corpus_id]["test_uar"].get<double>());
  }
  json cfg = rc.doc;
  cfg["train"] = rc.train;
  cfg["encoder"] = r.model.config;
  write_train_outputs(out, r, {{"config", cfg}, {"final", final_metrics}});
  fmt::print("trained {} steps, selected step {}, checkpoint {}\n", rc.train.n_steps,
             r.log.selected_step, (out / "model.bbex").string());
  write_run_meta(out, "train", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return kExitOk;
}

struct ExpandArgs {
  std::string in;
  std::optional<std::size_t> multiplier;
  std::optional<std::string> freeze_policy;
  std::size_t probes = 20;
};

int cmd_expand(const Common& c, const ExpandArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = resolve_config(c);
  ExpansionSpec spec = rc.expansion;
  if (a.multiplier) spec.multiplier = *a.multiplier;
  if (a.freeze_policy) spec.freeze_policy = parse_freeze_policy(*a.freeze_policy);
  const EncoderModel base = load_checkpoint(a.in);
  const EncoderModel expanded = expand(base, spec);
  const auto probes = random_probes(base.config, a.probes, 1, 32, rc.train.seed);
  const double diff = verify_preservation(base, expanded, probes);
  const fs::path out = prepare_out(c.out);
  save_checkpoint(expanded, out / "model.bbex");
  write_json(out / "summary.json",
             {{"expansion", spec},
              {"blocks_before", base.blocks.size()},
              {"blocks_after", expanded.blocks.size()},
              {"preservation_max_abs", diff},
              {"trainable_parameters", expanded.store.trainable_scalar_count()},
              {"total_parameters", expanded.store.scalar_count()},
              {"checkpoint_sha1", git_blob_hash(read_file(out / "model.bbex"))}});
  fmt::print("blocks: {} -> {}, preservation max|Δ| = {:.1f}\n", base.blocks.size(),
             expanded.blocks.size(), diff);
  write_run_meta(out, "expand", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  if (diff != 0.0) {
    fmt::print(stderr, "invariant violation: expansion changed the network output (max|diff| = {:g})\n",
               diff);
    return kExitInvariant;
  }
  return kExitOk;
}

struct FinetuneArgs {
  std::string in;
  std::string target;
  std::string mapping;
  std::optional<std::size_t> multiplier;
  std::optional<std::string> freeze_policy;
};

MappingTable mapping_for(const std::string& path) {
  return path.empty() ? MappingTable::defaults() : load_mapping_table(path, MappingTable::defaults());
}

int cmd_finetune(const Common& c, const FinetuneArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = resolve_config(c);
  rc.train.stage = Stage::SingleCorpus;
  const EncoderModel base = load_checkpoint(a.in);
  if (a.multiplier) rc.train.expand_multiplier = *a.multiplier;
  if (a.freeze_policy) {
    rc.train.freeze_policy = parse_freeze_policy(*a.freeze_policy);
  } else if (base.expansion) {
    rc.train.freeze_policy = base.expansion->freeze_policy;
  }
  const CorpusManifest target = load_manifest(a.target, mapping_for(a.mapping));
  check_input_dim(base, target);
  const fs::path out = prepare_out(c.out);

  const TrainResult r = train_transfer(base, target, rc.train);
  const EvalResult val = evaluate(r.model, target, Split::Val);
  const EvalResult test = evaluate(r.model, target, Split::Test);
  json cfg = rc.doc;
  cfg["train"] = rc.train;
  cfg["encoder"] = r.model.config;
  write_train_outputs(out, r,
                      {{"config", cfg},
                       {"target", target.corpus_id},
                       {"preservation_max_abs", r.log.preservation_max_abs},
                       {"trainable_parameters", r.model.store.trainable_scalar_count()},
                       {"final", {{"val", eval_json(val)}, {"test", eval_json(test)}}}});
  fmt::print("{}: step-0 val UAR {:.4f}, selected step {}, val UAR {:.4f}, test UAR {:.4f}\n",
             target.corpus_id, r.log.evals.front().val_uar, r.log.selected_step, val.uar, test.uar);
  write_run_meta(out, "finetune",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return kExitOk;
}

struct EvalArgs {
  std::string in;
  std::string corpora;
  std::string manifest;
  std::string mapping;
  std::string split = "test";
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  resolve_config(c);
  if (a.corpora.empty() == a.manifest.empty()) {
    fail(ErrorKind::Config, "eval needs exactly one of --corpora or --manifest");
  }
  const Split split = [&] {
    try {
      return parse_split(a.split);
    } catch (const Error& e) {
      fail(ErrorKind::Config, e.what());
    }
  }();
  const EncoderModel model = load_checkpoint(a.in);
  std::vector<CorpusManifest> corpora;
  if (!a.corpora.empty()) {
    corpora = load_corpus_set(a.corpora, mapping_for(a.mapping));
  } else {
    corpora.push_back(load_manifest(a.manifest, mapping_for(a.mapping)));
  }
  json results;
  for (const auto& m : corpora) {
    check_input_dim(model, m);
    const EvalResult r = evaluate(model, m, split);
    results[m.corpus_id] = eval_json(r);
    fmt::print("{} [{}]: UAR {:.4f} over {} samples\n", m.corpus_id, a.split, r.uar, r.n_samples);
  }
  if (!c.out.empty()) {
    const fs::path out = prepare_out(c.out);
    write_json(out / "eval.json", {{"split", a.split}, {"results", results}});
    write_run_meta(out, "eval", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string in;
  std::size_t probes = 100;
  std::size_t blocks = 2;
  double step = 1e-6;
  double floor = 1e-3;
  double tolerance = 1e-5;
};

int cmd_gradcheck(const Common& c, const GradcheckArgs& a) {
  RunConfig rc = resolve_config(c);
  EncoderModel model;
  if (a.in.empty()) {
    EncoderConfig cfg = rc.encoder;
    cfg.n_blocks = a.blocks;
    model = build_model(cfg, rc.train.seed);
  } else {
    model = load_checkpoint(a.in);
  }
  GradCheckOptions opt;
  opt.probes = a.probes;
  opt.step = a.step;
  opt.floor = a.floor;
  opt.seed = rc.train.seed;
  const GradCheckResult r = gradcheck_model(model, opt);
  fmt::print("gradcheck: {} probes, max relative error {:.3e}\nworst: {}\n", r.probes,
             r.max_rel_error, r.worst);
  if (!c.out.empty()) {
    write_json(prepare_out(c.out) / "gradcheck.json",
               {{"probes", r.probes}, {"max_rel_error", r.max_rel_error}, {"worst", r.worst}});
  }
  if (!(r.max_rel_error <= a.tolerance)) {
    fmt::print(stderr, "invariant violation: gradient error above {:g}\n", a.tolerance);
    return kExitInvariant;
  }
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> evals;
};

int cmd_report(const Common& c, const ReportArgs& a) {
  resolve_config(c);
  ResultTable table;
  for (const auto& spec : a.evals) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::Config, "--eval takes NAME=PATH");
    const std::string variant = spec.substr(0, eq);
    json doc;
    try {
      doc = json::parse(read_file(spec.substr(eq + 1)));
      for (const auto& [corpus, r] : doc.at("results").items()) {
        table[corpus][variant] = r.at("uar").get<double>();
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::Parse, "eval file '" + spec.substr(eq + 1) + "': " + e.what());
    }
  }
  const Report r = make_report(table);
  fmt::print("{}", r.table);
  if (!c.out.empty()) {
    const fs::path out = prepare_out(c.out);
    write_file(out / "report.csv", r.csv);
    write_file(out / "report.txt", r.table);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backbone block expansion toolkit"};
  app.require_subcommand(1);

  Common common;
  SynthArgs synth;
  TrainArgs train;
  ExpandArgs expand_args;
  FinetuneArgs finetune;
  EvalArgs eval;
  GradcheckArgs gradcheck;
  ReportArgs report;

  auto* s = app.add_subcommand("synth-data", "Generate synthetic corpora with speaker-level splits");
  add_common(s, common, true);
  s->add_option("--corpora", synth.corpora, "Number of source corpora");
  s->add_option("--speakers", synth.speakers, "Speakers per corpus");
  s->add_option("--samples-per-speaker", synth.samples_per_speaker, "Utterances per speaker and class");
  s->add_option("--noise-std", synth.noise_std, "Per-frame noise std");
  s->add_option("--shift", synth.shift, "Corpus shift strength of the source corpora");
  s->add_option("--target-shift", synth.target_shift, "Also write a 'target' corpus with this shift");
  s->add_option("--target-noise-std", synth.target_noise_std, "Noise std of the target corpus");
  s->add_option("--target-speakers", synth.target_speakers, "Speakers in the target corpus");
  s->add_option("--bin-width", synth.bin_width, "Duration histogram bin width in seconds");

  auto* t = app.add_subcommand("train", "Stage 1: round-robin multi-corpus training");
  add_common(t, common, true);
  t->add_option("--corpora", train.corpora, "Corpus set JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--init", train.init, "Start from this checkpoint instead of a fresh model")
      ->check(CLI::ExistingFile);

  auto* e = app.add_subcommand("expand", "Backbone block expansion with preservation check");
  add_common(e, common, true);
  e->add_option("--in", expand_args.in, "Input checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--multiplier", expand_args.multiplier, "2 or 3");
  e->add_option("--freeze-policy", expand_args.freeze_policy, "freeze-original|non-frozen|head-only");
  e->add_option("--probes", expand_args.probes, "Random probes for the preservation check");

  auto* f = app.add_subcommand("finetune", "Stage 2: single-corpus transfer fine-tuning");
  add_common(f, common, true);
  f->add_option("--in", finetune.in, "Base checkpoint")->required()->check(CLI::ExistingFile);
  f->add_option("--target", finetune.target, "Target manifest (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  f->add_option("--mapping", finetune.mapping, "Label mapping overrides")->check(CLI::ExistingFile);
  f->add_option("--multiplier", finetune.multiplier, "Expand before training (2 or 3)");
  f->add_option("--freeze-policy", finetune.freeze_policy, "freeze-original|non-frozen|head-only");

  auto* v = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  add_common(v, common, false);
  v->add_option("--in", eval.in, "Checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--corpora", eval.corpora, "Corpus set JSON")->check(CLI::ExistingFile);
  v->add_option("--manifest", eval.manifest, "Single manifest")->check(CLI::ExistingFile);
  v->add_option("--mapping", eval.mapping, "Label mapping overrides")->check(CLI::ExistingFile);
  v->add_option("--split", eval.split, "train|val|test");

  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients");
  add_common(g, common, false);
  g->add_option("--in", gradcheck.in, "Check this checkpoint instead of a fresh model")
      ->check(CLI::ExistingFile);
  g->add_option("--probes", gradcheck.probes, "Number of probes");
  g->add_option("--blocks", gradcheck.blocks, "Blocks of the fresh model");
  g->add_option("--step", gradcheck.step, "Central-difference step");
  g->add_option("--floor", gradcheck.floor, "Relative-error denominator floor");
  g->add_option("--tolerance", gradcheck.tolerance, "Maximum accepted relative error");

  auto* r = app.add_subcommand("report", "Corpus x variant UAR table");
  add_common(r, common, false);
  r->add_option("--eval", report.evals, "NAME=eval.json (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitConfig;
  }

  try {
    if (s->parsed()) return cmd_synth(common, synth);
    if (t->parsed()) return cmd_train(common, train);
    if (e->parsed()) return cmd_expand(common, expand_args);
    if (f->parsed()) return cmd_finetune(common, finetune);
    if (v->parsed()) return cmd_eval(common, eval);
    if (g->parsed()) return cmd_gradcheck(common, gradcheck);
    if (r->parsed()) return cmd_report(common, report);
  } catch (const Error& ex) {
    fmt::print(stderr, "{}: {}\n", to_string(ex.kind()), ex.what());
    return exit_code(ex.kind());
  } catch (const std::exception& ex) {
    fmt::print(stderr, "error: {}\n", ex.what());
    return kExitData;
  }
  return kExitConfig;
}
