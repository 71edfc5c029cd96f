#include "bbe/expansion.hpp"

#include <algorithm>
#include <cmath>

#include "bbe/error.hpp"
#include "bbe/rng.hpp"

namespace bbe {

void ExpansionSpec::validate() const {
  if (multiplier != 2 && multiplier != 3) {
    fail(ErrorKind::Config,
         "expansion multiplier must be 2 or 3, got " + std::to_string(multiplier));
  }
  if (zll_init != "zeros") {
    fail(ErrorKind::Config, "zll init must be 'zeros' (got '" + zll_init + "')");
  }
}

std::string expanded_block_id(std::size_t source, std::size_t copy) {
  return "expand." + std::to_string(source) + "." + std::to_string(copy);
}

EncoderModel expand(const EncoderModel& base, const ExpansionSpec& spec) {
  spec.validate();
  if (base.expansion) fail(ErrorKind::State, "model is already expanded");
  if (base.blocks.empty()) fail(ErrorKind::State, "model has no encoder blocks");

  const std::size_t d = base.config.d_model;
  EncoderModel out;
  out.config = base.config;
  out.rng_state = base.rng_state;

  // Rebuild the store in forward order: frontend, then each original block
  // followed by its copies, then the head. Values and optimizer state of
  // existing entries are carried over verbatim.
  auto copy_entry = [&out](const Parameter& src, const std::string& name) -> Parameter& {
    Parameter& dst = out.store.add(name, src.value, src.decay);
    dst.frozen = src.frozen;
    return dst;
  };
  auto carry = [&](const Parameter& src) {
    Parameter& dst = copy_entry(src, src.name);
    dst.m = src.m;
    dst.v = src.v;
    dst.step = src.step;
  };

  for (const auto& p : base.store) {
    if (starts_with_segment(p.name, "frontend")) carry(p);
  }
  for (std::size_t i = 0; i < base.blocks.size(); ++i) {
    const BlockInfo& b = base.blocks[i];
    for (const auto& p : base.store) {
      if (starts_with_segment(p.name, b.id)) carry(p);
    }
    out.blocks.push_back({b.id, BlockOrigin::Original, i, true});
    for (std::size_t j = 1; j < spec.multiplier; ++j) {
      const std::string id = expanded_block_id(i, j);
      for (const auto& p : base.store) {
        if (starts_with_segment(p.name, b.id)) {
          // Duplicate: same values, fresh optimizer state.
          copy_entry(p, id + p.name.substr(b.id.size()));
        }
      }
      out.store.add(id + ".zll.weight", Tensor({d, d}), false);
      out.store.add(id + ".zll.bias", Tensor({d}), false);
      out.blocks.push_back({id, BlockOrigin::Expanded, i, true});
    }
  }
  for (const auto& p : base.store) {
    if (starts_with_segment(p.name, "head")) carry(p);
  }

  out.config.n_blocks = out.blocks.size();
  out.expansion = ExpansionInfo{spec.multiplier, spec.freeze_policy};
  apply_freeze_policy(out, spec.freeze_policy);
  return out;
}

BlockCounts count_blocks(const EncoderModel& model) {
  BlockCounts c;
  for (const auto& b : model.blocks) {
    (b.origin == BlockOrigin::Original ? c.original : c.expanded) += 1;
  }
  return c;
}

namespace {

void check_related(const EncoderModel& base, const EncoderModel& expanded) {
  const auto& a = base.config;
  const auto& b = expanded.config;
  if (a.d_model != b.d_model || a.n_heads != b.n_heads || a.d_ffn != b.d_ffn ||
      a.input_dim != b.input_dim || a.n_classes != b.n_classes ||
      !(a.frontend == b.frontend)) {
    fail(ErrorKind::State, "expanded model config is unrelated to the base model");
  }
  std::vector<std::string> base_ids, kept_ids;
  for (const auto& blk : base.blocks) base_ids.push_back(blk.id);
  for (const auto& blk : expanded.blocks) {
    if (blk.origin == BlockOrigin::Original) kept_ids.push_back(blk.id);
  }
  if (base_ids != kept_ids) {
    fail(ErrorKind::State, "original block layout differs between base and expanded model");
  }
  for (const auto& p : base.store) {
    const Parameter* q = expanded.store.find(p.name);
    if (!q || q->value.shape() != p.value.shape()) {
      fail(ErrorKind::State, "expanded model lacks base parameter '" + p.name + "'");
    }
  }
}

}  // namespace

double verify_preservation(const EncoderModel& base, const EncoderModel& expanded,
                           std::span<const Tensor> probes) {
  if (probes.empty()) fail(ErrorKind::Input, "verify_preservation needs at least one probe");
  check_related(base, expanded);
  double worst = 0.0;
  for (const Tensor& probe : probes) {
    worst = std::max(worst, max_abs_diff(forward(base, probe), forward(expanded, probe)));
  }
  return worst;
}

EncoderModel strip_expansion(const EncoderModel& expanded) {
  EncoderModel out;
  out.config = expanded.config;
  out.rng_state = expanded.rng_state;
  for (const auto& b : expanded.blocks) {
    if (b.origin == BlockOrigin::Original) out.blocks.push_back(b);
  }
  for (const auto& p : expanded.store) {
    if (starts_with_segment(p.name, "expand")) continue;
    Parameter& dst = out.store.add(p.name, p.value, p.decay);
    dst.frozen = p.frozen;
    dst.m = p.m;
    dst.v = p.v;
    dst.step = p.step;
  }
  out.config.n_blocks = out.blocks.size();
  refresh_block_trainability(out);
  return out;
}

std::vector<Tensor> random_probes(const EncoderConfig& config, std::size_t count,
                                  std::size_t min_frames, std::size_t max_frames,
                                  std::uint64_t seed) {
  if (min_frames < 1 || max_frames < min_frames) {
    fail(ErrorKind::Config, "probe frame range must satisfy 1 <= min <= max");
  }
  Rng rng(seed);
  std::vector<Tensor> probes;
  probes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t T = min_frames + rng.below(max_frames - min_frames + 1);
    Tensor t({T, config.input_dim});
    for (auto& v : t.data()) v = rng.normal();
    probes.push_back(std::move(t));
  }
  return probes;
}

}  // namespace bbe
