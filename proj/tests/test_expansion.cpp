#include "bbe/expansion.hpp"
#include "bbe/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace bbe;

namespace {

bool is_original(const EncoderModel& m, const std::string& name) {
  for (const auto& b : m.blocks) {
    if (b.origin == BlockOrigin::Original && starts_with_segment(name, b.id)) return true;
  }
  return starts_with_segment(name, "frontend");
}

}  // namespace

TEST_CASE("expansion multiplies depth and records origins") {
  const auto base = build_model(test::tiny_config(4, 8), 1);
  for (std::size_t mult : {2, 3}) {
    const auto ex = expand(base, {mult, FreezePolicy::FreezeOriginal});
    CHECK(ex.blocks.size() == 4 * mult);
    const auto counts = count_blocks(ex);
    CHECK(counts.original == 4);
    CHECK(counts.expanded == 4 * (mult - 1));
    // Interleaved: original i, then its copies.
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(ex.blocks[i * mult].id == "block." + std::to_string(i));
      for (std::size_t j = 1; j < mult; ++j) {
        CHECK(ex.blocks[i * mult + j].id == expanded_block_id(i, j));
        CHECK(ex.blocks[i * mult + j].origin == BlockOrigin::Expanded);
        CHECK(ex.blocks[i * mult + j].source == i);
      }
    }
    CHECK(ex.expansion->multiplier == mult);
    CHECK(base.blocks.size() == 4);
  }
}

TEST_CASE("a fresh expansion preserves outputs exactly") {
  const auto base = build_model(test::tiny_config(3, 16), 2);
  const auto probes = random_probes(base.config, 10, 1, 12, 5);
  for (std::size_t mult : {2, 3}) {
    for (auto policy : {FreezePolicy::FreezeOriginal, FreezePolicy::NonFrozen}) {
      const auto ex = expand(base, {mult, policy});
      CHECK(verify_preservation(base, ex, probes) == 0.0);
      for (const auto& x : probes) CHECK(forward(ex, x).bit_equal(forward(base, x)));
    }
  }
}

TEST_CASE("ZLLs start at zero and are exempt from weight decay") {
  const auto ex = expand(build_model(test::tiny_config(2, 8), 3), {2, FreezePolicy::FreezeOriginal});
  const auto& w = ex.store.get(expanded_block_id(0, 1) + ".zll.weight");
  const auto& b = ex.store.get(expanded_block_id(0, 1) + ".zll.bias");
  for (double v : w.value.data()) CHECK(v == 0.0);
  for (double v : b.value.data()) CHECK(v == 0.0);
  CHECK_FALSE(w.decay);
  CHECK(ex.store.get(expanded_block_id(0, 1) + ".attn.q.weight").decay);
  // Copies start from the source block's weights.
  CHECK(ex.store.get(expanded_block_id(1, 1) + ".ffn.in.weight")
            .value.bit_equal(ex.store.get("block.1.ffn.in.weight").value));
}

TEST_CASE("freeze policies and trainable counts") {
  const auto cfg = test::tiny_config(4, 16);
  const auto base = build_model(cfg, 4);
  const auto frozen = expand(base, {2, FreezePolicy::FreezeOriginal});
  const auto open = expand(base, {2, FreezePolicy::NonFrozen});
  const auto head = expand(base, {2, FreezePolicy::HeadOnly});

  const std::size_t block = block_parameter_count(16, cfg.d_ffn);
  const std::size_t zll = 16 * 16 + 16;
  const std::size_t hd = head_parameter_count(16, 6);
  CHECK(frozen.store.trainable_scalar_count() == 4 * (block + zll) + hd);
  CHECK(open.store.trainable_scalar_count() == 8 * block + 4 * zll + hd);
  CHECK(head.store.trainable_scalar_count() == hd);
  const double ratio = static_cast<double>(open.store.trainable_scalar_count()) /
                       static_cast<double>(frozen.store.trainable_scalar_count());
  CHECK(ratio > 1.7);
  CHECK(ratio < 2.0);

  for (const auto& p : frozen.store) {
    if (is_original(frozen, p.name)) CHECK(p.frozen);
  }
  for (const auto& b : frozen.blocks) CHECK(b.trainable == (b.origin == BlockOrigin::Expanded));
}

TEST_CASE("expansion preconditions") {
  const auto base = build_model(test::tiny_config(2, 8), 5);
  CHECK(test::error_kind([&] { expand(base, {4, FreezePolicy::FreezeOriginal}); }) == ErrorKind::Config);
  const auto ex = expand(base, {2, FreezePolicy::FreezeOriginal});
  CHECK(test::error_kind([&] { expand(ex, {2, FreezePolicy::FreezeOriginal}); }) == ErrorKind::State);
  CHECK(test::error_kind([&] { verify_preservation(base, ex, {}); }) == ErrorKind::Input);
  const auto other = build_model(test::tiny_config(3, 8), 5);
  const auto probes = random_probes(base.config, 2, 1, 4, 1);
  CHECK(test::error_kind([&] { verify_preservation(other, ex, probes); }) == ErrorKind::State);
}

TEST_CASE("training moves the copies while frozen originals stay bit-equal") {
  auto spec = test::small_synth("c", 3);
  const auto corpus = generate_synthetic_corpus(spec);
  const auto base = build_model(test::tiny_config(2, 8), 6);
  auto ex = expand(base, {2, FreezePolicy::FreezeOriginal});
  const auto before = ex;

  TrainConfig cfg;
  cfg.n_steps = 50;
  cfg.eval_every = 50;
  cfg.adamw.learning_rate = 1e-3;
  cfg.selection = Selection::LastStep;
  const auto r = train_multi(ex, std::span(&corpus, 1), cfg);

  const auto probes = random_probes(base.config, 4, 2, 8, 2);
  CHECK(verify_preservation(base, r.model, probes) > 0.0);
  for (std::size_t i = 0; i < r.model.store.size(); ++i) {
    const auto& p = r.model.store[i];
    if (is_original(r.model, p.name)) {
      CHECK(p.value.bit_equal(before.store[i].value));
    }
  }
  CHECK_FALSE(r.model.store.get(expanded_block_id(0, 1) + ".zll.weight")
                  .value.bit_equal(before.store.get(expanded_block_id(0, 1) + ".zll.weight").value));

  // Stripping the copies brings back the base network.
  const auto stripped = strip_expansion(r.model);
  CHECK_FALSE(stripped.expansion.has_value());
  CHECK(stripped.blocks.size() == 2);
  CHECK(stripped.store.get("block.1.attn.k.weight")
            .value.bit_equal(base.store.get("block.1.attn.k.weight").value));
  const auto stripped_fresh = strip_expansion(before);
  for (const auto& x : probes) CHECK(forward(stripped_fresh, x).bit_equal(forward(base, x)));
}
