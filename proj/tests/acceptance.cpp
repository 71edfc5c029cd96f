// End-to-end acceptance checks. One line per criterion; exit status is the
// number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bbe/corpus.hpp"
#include "bbe/expansion.hpp"
#include "bbe/gradcheck.hpp"
#include "bbe/io.hpp"
#include "bbe/metrics.hpp"
#include "bbe/trainer.hpp"
#include "cli_pipeline.hpp"

using namespace bbe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

const fs::path kOut = fs::temp_directory_path() / "bbe_acceptance";

EncoderConfig toy_config(std::size_t blocks, std::size_t d) {
  EncoderConfig c;
  c.n_blocks = blocks;
  c.d_model = d;
  c.n_heads = 4;
  c.d_ffn = 2 * d;
  c.input_dim = d;
  return c;
}

// 1. Fresh expansions reproduce the base network bit for bit.
Outcome exact_preservation() {
  Rng rng(2024);
  std::size_t checks = 0;
  double worst = 0.0;
  for (int model = 0; model < 50; ++model) {
    const std::size_t blocks = 2 + rng.below(5);
    const std::size_t d = rng.below(2) ? 32 : 16;
    const auto base = build_model(toy_config(blocks, d), rng.next_u64());
    const auto probes = random_probes(base.config, 20, 1, 16, rng.next_u64());
    for (std::size_t mult : {2, 3}) {
      const auto ex = expand(base, {mult, FreezePolicy::FreezeOriginal});
      worst = std::max(worst, verify_preservation(base, ex, probes));
      ++checks;
    }
  }
  return {worst == 0.0, fmt::format("{} model/multiplier pairs x 20 probes, max|diff| = {}", checks, worst)};
}

bool is_original(const EncoderModel& m, const std::string& name) {
  if (starts_with_segment(name, "frontend")) return true;
  for (const auto& b : m.blocks) {
    if (b.origin == BlockOrigin::Original && starts_with_segment(name, b.id)) return true;
  }
  return false;
}

std::vector<CorpusManifest> small_sources(std::size_t d) {
  std::vector<CorpusManifest> out;
  for (std::uint64_t i = 0; i < 2; ++i) {
    SynthSpec s;
    s.corpus_id = "fz" + std::to_string(i);
    s.seed = 70 + i;
    s.d = d;
    s.samples_per_speaker = 4;
    out.push_back(generate_synthetic_corpus(s));
  }
  return out;
}

EncoderModel conv_base() {
  EncoderConfig c = toy_config(2, 16);
  c.frontend.kind = FrontendKind::Conv;
  c.frontend.conv_layers = {{16, 1, 1}};
  return build_model(c, 31);
}

// Trained models kept for the checkpoint criterion.
std::vector<std::pair<EncoderModel, std::string>> g_trained;

// 2. Frozen originals stay byte-identical through training; non-frozen ones move.
Outcome freeze_soundness() {
  const auto corpora = small_sources(16);
  const auto base = conv_base();
  TrainConfig tc;
  tc.n_steps = 500;
  tc.eval_every = 500;
  tc.batch_size = 8;
  tc.adamw.learning_rate = 1e-3;
  tc.selection = Selection::LastStep;

  const auto frozen0 = expand(base, {2, FreezePolicy::FreezeOriginal});
  const auto frozen = train_multi(frozen0, corpora, tc).model;
  std::size_t audited = 0, changed_frozen = 0, moved_copies = 0;
  for (std::size_t i = 0; i < frozen0.store.size(); ++i) {
    const auto& before = frozen0.store[i];
    const auto& after = frozen.store[i];
    if (is_original(frozen0, before.name)) {
      ++audited;
      if (!before.value.bit_equal(after.value)) {
        ++changed_frozen;
      }
    } else if (!before.value.bit_equal(after.value)) {
      ++moved_copies;
    }
  }

  const auto open0 = expand(base, {2, FreezePolicy::NonFrozen});
  const auto open = train_multi(open0, corpora, tc).model;
  std::size_t changed_open = 0;
  for (std::size_t i = 0; i < open0.store.size(); ++i) {
    const auto& p = open0.store[i];
    if (is_original(open0, p.name) && !starts_with_segment(p.name, "frontend") &&
        !p.value.bit_equal(open.store[i].value)) {
      ++changed_open;
    }
  }
  std::size_t frontend_changed = 0;
  for (std::size_t i = 0; i < open0.store.size(); ++i) {
    if (starts_with_segment(open0.store[i].name, "frontend") &&
        !open0.store[i].value.bit_equal(open.store[i].value)) {
      ++frontend_changed;
    }
  }
  g_trained.emplace_back(frozen, "freeze-original x2");
  g_trained.emplace_back(open, "non-frozen x2");
  const bool pass = audited > 0 && changed_frozen == 0 && moved_copies > 0 && changed_open > 0 &&
                    frontend_changed == 0;
  return {pass, fmt::format("freeze-original: {}/{} original+frontend tensors changed, {} copy tensors "
                            "moved; non-frozen: {} original tensors changed, frontend changed {}",
                            changed_frozen, audited, moved_copies, changed_open, frontend_changed)};
}

// 3. Analytic gradients against central differences.
Outcome gradient_correctness() {
  double worst = 0.0;
  std::size_t probes = 0;
  std::string where;
  for (double init_std : {0.02, 0.5}) {
    EncoderConfig c = toy_config(2, 8);
    c.n_heads = 2;
    c.init_std = init_std;
    const auto model = build_model(c, 5);
    GradCheckOptions opt;
    opt.probes = 150;
    opt.step = 1e-6;
    opt.floor = 1e-3;
    opt.seed = 11;
    const auto r = gradcheck_model(model, opt);
    probes += r.probes;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = r.worst;
    }
  }
  return {worst < 1e-5 && probes >= 100,
          fmt::format("{} probes on 2-block models, step 1e-6, floor 1e-3: max rel error {:.3e} ({})",
                      probes, worst, where)};
}

// 4. Round-robin fairness at the stage-1 budget.
Outcome round_robin_fairness() {
  std::vector<std::string> ids;
  for (int i = 0; i < 26; ++i) ids.push_back(fmt::format("corpus{:02}", i));
  const auto sched = round_robin_schedule(ids, 3000);
  std::map<std::string, std::size_t> counts;
  for (const auto& id : sched) ++counts[id];
  std::size_t lo = 3000, hi = 0;
  bool in_range = counts.size() == 26;
  for (const auto& [id, n] : counts) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
    in_range = in_range && (n == 3000 / 26 || n == (3000 + 25) / 26);
  }
  return {in_range && hi - lo <= 1 && sched.size() == 3000,
          fmt::format("26 corpora x 3000 steps: counts in [{}, {}]", lo, hi)};
}

double recall_oracle(const std::vector<std::size_t>& p, const std::vector<std::size_t>& y, std::size_t c) {
  double sum = 0.0;
  int present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double hit = 0.0, n = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] != k) continue;
      n += 1.0;
      hit += p[i] == k ? 1.0 : 0.0;
    }
    if (n > 0.0) {
      sum += hit / n;
      ++present;
    }
  }
  return sum / present;
}

// 5. UAR against a per-class recall oracle.
Outcome uar_oracle() {
  Rng rng(5150);
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t c = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::size_t> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.below(c);
      y[i] = rng.below(c);
    }
    worst = std::max(worst, std::abs(uar(confusion(p, y, c)) - recall_oracle(p, y, c)));
  }
  ConfusionMatrix diag(4);
  for (std::size_t k = 0; k < 4; ++k) diag.at(k, k) = 3 + k;
  ConfusionMatrix ex(2);
  ex.at(0, 0) = 2;
  ex.at(1, 0) = 1;
  ex.at(1, 1) = 1;
  const bool examples = uar(diag) == 1.0 && uar(ex) == 0.75;
  return {worst <= 1e-12 && examples,
          fmt::format("1000 draws, max|uar - oracle| = {:.1e}; diagonal -> {}, [[2,0],[1,1]] -> {}", worst,
                      uar(diag), uar(ex))};
}

// 6. First AdamW step against the bias-corrected closed form.
Outcome adamw_oracle() {
  AdamWConfig cfg;  // 0.9, 0.999, 1e-8, 1e-5
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double theta = rng.uniform(-2.0, 2.0);
    const double g = rng.uniform(-3.0, 3.0);
    const bool decay = trial % 2 == 0;
    ParameterStore store;
    store.add("w", Tensor::vector({theta}), decay);
    store.get("w").grad[0] = g;
    adamw_step(store, cfg);
    // m_hat = g, v_hat = g^2 after one step.
    const double m_hat = ((1 - cfg.beta1) * g) / (1 - cfg.beta1);
    const double v_hat = ((1 - cfg.beta2) * g * g) / (1 - cfg.beta2);
    const double expected = theta * (1 - (decay ? cfg.learning_rate * cfg.weight_decay : 0.0)) -
                            cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    worst = std::max(worst, std::abs(store.get("w").value[0] - expected));
  }
  ParameterStore unit;
  unit.add("w", Tensor::vector({0.0}), false);
  unit.get("w").grad[0] = 1.0;
  adamw_step(unit, cfg);
  const double step = unit.get("w").value[0];
  const bool unit_ok = std::abs(step - (-cfg.learning_rate / (1.0 + cfg.epsilon))) <= 1e-12;
  return {worst <= 1e-12 && unit_ok && cfg.beta1 == 0.9 && cfg.beta2 == 0.999 && cfg.epsilon == 1e-8 &&
              cfg.learning_rate == 1e-5,
          fmt::format("200 scalar first steps, max|diff| = {:.1e}; g=1 step = {:.12e}", worst, step)};
}

struct TransferRun {
  double zero_shot_val = 0.0;
  double step0_val_expanded = 0.0;
  std::vector<double> a, b, c;
  TrainLog log_a;
  std::string eval_csv_a;
  double seconds = 0.0;
};

TransferRun g_transfer;

// 7. Scaled-down transfer trend.
Outcome transfer_trend() {
  const auto t0 = Clock::now();
  std::vector<CorpusManifest> sources;
  for (std::uint64_t i = 0; i < 4; ++i) {
    SynthSpec s;
    s.corpus_id = "src" + std::to_string(i);
    s.seed = 100 + i;
    s.corpus_shift = 0.2;
    s.samples_per_speaker = 8;
    sources.push_back(generate_synthetic_corpus(s));
  }
  SynthSpec ts;
  ts.corpus_id = "target";
  ts.seed = 900;
  ts.corpus_shift = 1.0;
  ts.noise_std = 4.0;
  ts.samples_per_speaker = 3;
  ts.n_speakers = 12;
  ts.splits.frac_test = 0.25;
  ts.splits.frac_val = 0.25;
  const auto target = generate_synthetic_corpus(ts);

  const EncoderConfig ec;  // 4 blocks, d_model 32
  TrainConfig s1;
  s1.n_steps = 2000;
  s1.eval_every = 500;
  s1.adamw.learning_rate = 1e-3;
  const auto stage1 = train_multi(build_model(ec, 1), sources, s1);
  auto& T = g_transfer;
  T.zero_shot_val = evaluate(stage1.model, target, Split::Val).uar;

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig s2;
    s2.stage = Stage::SingleCorpus;
    s2.n_steps = 200;
    s2.eval_every = 100;
    s2.adamw.learning_rate = 1e-4;
    s2.seed = seed;
    TrainConfig sa = s2;
    sa.expand_multiplier = 2;
    sa.freeze_policy = FreezePolicy::FreezeOriginal;
    const auto ra = train_transfer(stage1.model, target, sa);
    const auto rb = train_transfer(stage1.model, target, s2);
    const auto rc = train_transfer(build_model(ec, 1000 + seed), target, s2);
    T.a.push_back(evaluate(ra.model, target, Split::Test).uar);
    T.b.push_back(evaluate(rb.model, target, Split::Test).uar);
    T.c.push_back(evaluate(rc.model, target, Split::Test).uar);
    if (seed == 0) {
      T.log_a = ra.log;
      T.step0_val_expanded = ra.log.evals.front().val_uar;
      g_trained.emplace_back(ra.model, "transfer freeze-original x2");
    }
  }
  auto mean = [](const std::vector<double>& v) { return (v[0] + v[1] + v[2]) / 3.0; };
  const double a = mean(T.a), b = mean(T.b), c = mean(T.c);
  T.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool exact = T.step0_val_expanded == T.zero_shot_val;
  return {a >= b - 0.02 && b > c + 0.05 && exact,
          fmt::format("mean test UAR a={:.4f} b={:.4f} c={:.4f}; step-0 val {:.4f} vs zero-shot {:.4f}; {:.0f} s",
                      a, b, c, T.step0_val_expanded, T.zero_shot_val, T.seconds)};
}

// 8. The expanded curve starts at the zero-shot point and is logged every 100 steps.
Outcome curve_anchor() {
  const auto& T = g_transfer;
  fs::create_directories(kOut);
  write_file(kOut / "transfer_val.csv", T.log_a.eval_csv());
  const std::string csv = read_file(kOut / "transfer_val.csv");
  std::vector<std::size_t> steps;
  for (const auto& e : T.log_a.evals) steps.push_back(e.step);
  const bool cadence = steps == std::vector<std::size_t>{0, 100, 200};
  const std::string first = fmt::format("step,corpus,val_uar\n0,target,{:.17g}\n", T.zero_shot_val);
  const bool anchored = !T.log_a.evals.empty() && T.log_a.evals[0].val_uar == T.zero_shot_val &&
                        csv.rfind(first, 0) == 0 && csv.find("\n100,target,") != std::string::npos &&
                        csv.find("\n200,target,") != std::string::npos;
  return {cadence && anchored,
          fmt::format("val curve steps [0, 100, 200] = {}; CSV starts at the zero-shot point: {}", cadence,
                      anchored)};
}

// 9. Re-running the CLI pipeline reproduces every artifact byte for byte.
Outcome cli_determinism() {
  const auto root = kOut / "pipeline";
  const auto first = test::run_pipeline(root, 17);
  if (!first.ok()) return {false, "first pipeline run failed at " + first.exits.back().first};
  const auto a = test::artifacts(root);
  const auto second = test::run_pipeline(root, 17);
  if (!second.ok()) return {false, "second pipeline run failed at " + second.exits.back().first};
  const auto b = test::artifacts(root);
  std::size_t differing = 0, checkpoints = 0, csvs = 0;
  for (const auto& [path, bytes] : a) {
    const auto it = b.find(path);
    if (it == b.end() || it->second != bytes) ++differing;
    if (path.ends_with(".bbex")) ++checkpoints;
    if (path.ends_with(".csv")) ++csvs;
  }
  return {differing == 0 && a.size() == b.size() && checkpoints > 0 && csvs > 0,
          fmt::format("{} artifacts ({} checkpoints, {} CSVs), {} differ", a.size(), checkpoints, csvs,
                      differing)};
}

// 10. save -> load -> evaluate equals evaluate before saving.
Outcome checkpoint_roundtrip() {
  fs::create_directories(kOut);
  SynthSpec s;
  s.corpus_id = "rt";
  s.seed = 5;
  s.samples_per_speaker = 4;
  const auto corpus32 = generate_synthetic_corpus(s);
  s.d = 16;
  const auto corpus16 = generate_synthetic_corpus(s);
  auto models = g_trained;
  models.emplace_back(expand(build_model(EncoderConfig{}, 8), {3, FreezePolicy::NonFrozen}), "fresh x3");
  std::size_t checked = 0, mismatched = 0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& [model, label] = models[k];
    const auto path = kOut / fmt::format("roundtrip{}.bbex", k);
    save_checkpoint(model, path);
    const auto back = load_checkpoint(path);
    const auto& corpus = model.config.input_dim == 16 ? corpus16 : corpus32;
    bool same = back.blocks == model.blocks && back.expansion == model.expansion;
    for (Split sp : {Split::Train, Split::Val, Split::Test}) {
      const auto e0 = evaluate(model, corpus, sp);
      const auto e1 = evaluate(back, corpus, sp);
      same = same && e0.uar == e1.uar && e0.confusion == e1.confusion;
      for (std::size_t i : corpus.indices(sp)) {
        same = same && forward(back, corpus.samples[i].frames).bit_equal(forward(model, corpus.samples[i].frames));
      }
    }
    ++checked;
    if (!same) ++mismatched;
  }
  return {checked >= 3 && mismatched == 0,
          fmt::format("{} models (expanded, with origin metadata), {} mismatched", checked, mismatched)};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double limit_s;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria = {
      {"exact preservation", exact_preservation, 60},
      {"freeze soundness", freeze_soundness, 120},
      {"gradient correctness", gradient_correctness, 120},
      {"round-robin fairness", round_robin_fairness, 0},
      {"UAR oracle equivalence", uar_oracle, 0},
      {"AdamW single-step oracle", adamw_oracle, 0},
      {"scaled-down transfer trend", transfer_trend, 20 * 60},
      {"step-0 curve anchor", curve_anchor, 0},
      {"end-to-end determinism", cli_determinism, 0},
      {"checkpoint roundtrip", checkpoint_roundtrip, 0},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (criteria[i].limit_s > 0 && secs >= criteria[i].limit_s) {
      o.pass = false;
      o.detail += fmt::format("; over the {:.0f} s budget", criteria[i].limit_s);
    }
    std::printf("[%s] %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed;
}
