#pragma once

// Backbone block expansion.
//
// Every original encoder block i is followed by (multiplier - 1) copies of
// itself. A copy computes
//
//     y = x + zll(dup_block(x)),   zll(z) = z W + b,   W = 0, b = 0 at creation,
//
// so the expanded network computes exactly the same function as its base until
// the first optimizer step touches a ZLL. Freeze policy then decides which
// parameter groups train.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bbe/encoder.hpp"

namespace bbe {

struct ExpansionSpec {
  std::size_t multiplier = 2;  // 2 doubles depth, 3 triples it
  FreezePolicy freeze_policy = FreezePolicy::FreezeOriginal;
  std::string zll_init = "zeros";

  void validate() const;
};

// Returns an expanded deep copy; the base model is not modified.
EncoderModel expand(const EncoderModel& base, const ExpansionSpec& spec);

// Parameter-name prefix of the j-th copy (j >= 1) of original block i.
std::string expanded_block_id(std::size_t source, std::size_t copy);

// Max |base - expanded| over every logit of every probe. Zero, not merely
// small, for a freshly expanded model.
double verify_preservation(const EncoderModel& base, const EncoderModel& expanded,
                           std::span<const Tensor> probes);

// Drops every expanded copy, keeping the originals (and their current values).
EncoderModel strip_expansion(const EncoderModel& expanded);

struct BlockCounts {
  std::size_t original = 0;
  std::size_t expanded = 0;
};
BlockCounts count_blocks(const EncoderModel& model);

// Random [T, input_dim] probes with T drawn from [min_frames, max_frames].
std::vector<Tensor> random_probes(const EncoderConfig& config, std::size_t count,
                                  std::size_t min_frames, std::size_t max_frames,
                                  std::uint64_t seed);

}  // namespace bbe
