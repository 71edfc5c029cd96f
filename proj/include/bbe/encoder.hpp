#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbe/params.hpp"
#include "bbe/rng.hpp"
#include "bbe/tape.hpp"
#include "bbe/tensor.hpp"

namespace bbe {

struct ConvLayerSpec {
  std::size_t channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;

  bool operator==(const ConvLayerSpec&) const = default;
};

enum class FrontendKind { Identity, Conv };

struct FrontendConfig {
  FrontendKind kind = FrontendKind::Identity;
  std::vector<ConvLayerSpec> conv_layers;

  bool operator==(const FrontendConfig&) const = default;
};

struct EncoderConfig {
  std::size_t n_blocks = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 64;
  std::size_t n_classes = 6;
  // Channels of the raw input. Must equal d_model for the identity frontend.
  std::size_t input_dim = 32;
  // Encoder frames beyond this count are dropped.
  std::size_t frame_cap = 512;
  double ln_eps = 1e-5;
  double init_std = 0.02;
  FrontendConfig frontend;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

enum class BlockOrigin { Original, Expanded };

enum class FreezePolicy { FreezeOriginal, NonFrozen, HeadOnly };

const char* to_string(BlockOrigin origin) noexcept;
const char* to_string(FreezePolicy policy) noexcept;
BlockOrigin parse_block_origin(const std::string& s);
FreezePolicy parse_freeze_policy(const std::string& s);

struct BlockInfo {
  std::string id;          // parameter-name prefix, e.g. "block.2" or "expand.2.1"
  BlockOrigin origin = BlockOrigin::Original;
  std::size_t source = 0;  // index of the original block this one derives from
  bool trainable = true;

  bool operator==(const BlockInfo&) const = default;
};

struct ExpansionInfo {
  std::size_t multiplier = 2;
  FreezePolicy freeze_policy = FreezePolicy::FreezeOriginal;

  bool operator==(const ExpansionInfo&) const = default;
};

struct EncoderModel {
  EncoderConfig config;
  ParameterStore store;
  std::vector<BlockInfo> blocks;
  std::optional<ExpansionInfo> expansion;
  std::uint64_t rng_state = 0;
};

// Closed-form scalar count of a freshly built model.
std::size_t frontend_parameter_count(const EncoderConfig& config);
std::size_t block_parameter_count(std::size_t d_model, std::size_t d_ffn);
std::size_t head_parameter_count(std::size_t d_model, std::size_t n_classes);
std::size_t expected_parameter_count(const EncoderConfig& config);

// Weight decay applies to weight matrices only; biases, norms and ZLLs are exempt.
bool default_decay(std::string_view name);

EncoderModel build_model(const EncoderConfig& config, std::uint64_t seed);

// Adds the full parameter set of one encoder block under `prefix`.
void add_block_parameters(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                          std::size_t d_ffn, double init_std, Rng& rng);

// Replaces the classifier head with a fresh one of width n_classes, drawing
// from (and advancing) the model's RNG state.
void reinit_head(EncoderModel& model, std::size_t n_classes);

// Sets frozen flags per policy and refreshes BlockInfo::trainable. The
// frontend is frozen under every policy.
void apply_freeze_policy(EncoderModel& model, FreezePolicy policy);
void refresh_block_trainability(EncoderModel& model);

// Frame count produced by the frontend for `input_frames` raw frames.
std::size_t frontend_output_frames(const EncoderConfig& config, std::size_t input_frames);

// Differentiable pieces. Masks hold 1 for valid frames; an empty mask means
// every frame is valid.
Var conv_frontend(Tape& t, const EncoderModel& model, Var input);
Var encoder_block_forward(Tape& t, const ParameterStore& store, const std::string& prefix,
                          Var x, std::size_t heads, double ln_eps,
                          std::span<const std::uint8_t> mask);
Var expanded_block_forward(Tape& t, const ParameterStore& store, const std::string& prefix,
                           Var x, std::size_t heads, double ln_eps,
                           std::span<const std::uint8_t> mask);
// With input_var set, the input becomes a differentiable leaf whose handle is
// written there.
Var forward_tape(Tape& t, const EncoderModel& model, const Tensor& frames,
                 std::span<const std::uint8_t> mask = {}, Var* input_var = nullptr);

// Logits for one utterance. frames is [T, input_dim] (a 1-D waveform is
// accepted for input_dim == 1).
Tensor forward(const EncoderModel& model, const Tensor& frames,
               std::span<const std::uint8_t> mask = {});

// Deterministic argmax, ties to the lowest index.
std::size_t argmax(const Tensor& logits);

}  // namespace bbe
