#include "bbe/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "bbe/error.hpp"

namespace bbe {
namespace {

Tensor truncated_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.truncated_normal(std);
  return t;
}

std::string conv_prefix(std::size_t i) { return "frontend.conv." + std::to_string(i); }

bool is_head(std::string_view name) { return starts_with_segment(name, "head"); }
bool is_frontend(std::string_view name) { return starts_with_segment(name, "frontend"); }

ops::AttentionParams attention_params(Tape& t, const ParameterStore& s, const std::string& pre) {
  auto p = [&](const char* leaf) { return t.param(s.get(pre + ".attn." + leaf)); };
  return {p("q.weight"), p("q.bias"), p("k.weight"), p("k.bias"),
          p("v.weight"), p("v.bias"), p("o.weight"), p("o.bias")};
}

}  // namespace

void EncoderConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::Config, msg); };
  if (n_blocks < 1) bad("n_blocks must be >= 1");
  if (d_model < 1) bad("d_model must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    bad("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
        std::to_string(n_heads));
  }
  if (d_ffn < 1) bad("d_ffn must be >= 1");
  if (n_classes < 2) bad("n_classes must be >= 2");
  if (frame_cap < 1) bad("frame_cap must be >= 1");
  if (!(ln_eps > 0.0)) bad("ln_eps must be > 0");
  if (!(init_std > 0.0)) bad("init_std must be > 0");
  if (input_dim < 1) bad("input_dim must be >= 1");
  if (frontend.kind == FrontendKind::Identity) {
    if (!frontend.conv_layers.empty()) bad("identity frontend takes no conv layers");
    if (input_dim != d_model) {
      bad("identity frontend needs input_dim == d_model (" + std::to_string(input_dim) +
          " vs " + std::to_string(d_model) + ")");
    }
  } else {
    if (frontend.conv_layers.empty()) bad("conv frontend needs at least one layer");
    for (const auto& l : frontend.conv_layers) {
      if (l.channels < 1 || l.kernel < 1 || l.stride < 1) bad("conv layer fields must be >= 1");
    }
    if (frontend.conv_layers.back().channels != d_model) {
      bad("last conv layer must produce d_model channels");
    }
  }
}

const char* to_string(BlockOrigin origin) noexcept {
  return origin == BlockOrigin::Original ? "original" : "expanded";
}

const char* to_string(FreezePolicy policy) noexcept {
  switch (policy) {
    case FreezePolicy::FreezeOriginal: return "freeze-original";
    case FreezePolicy::NonFrozen: return "non-frozen";
    case FreezePolicy::HeadOnly: return "head-only";
  }
  return "?";
}

BlockOrigin parse_block_origin(const std::string& s) {
  if (s == "original") return BlockOrigin::Original;
  if (s == "expanded") return BlockOrigin::Expanded;
  fail(ErrorKind::Format, "unknown block origin '" + s + "'");
}

FreezePolicy parse_freeze_policy(const std::string& s) {
  if (s == "freeze-original") return FreezePolicy::FreezeOriginal;
  if (s == "non-frozen") return FreezePolicy::NonFrozen;
  if (s == "head-only") return FreezePolicy::HeadOnly;
  fail(ErrorKind::Config, "unknown freeze policy '" + s + "'");
}

bool default_decay(std::string_view name) {
  constexpr std::string_view kWeight = ".weight";
  const bool weight = name.size() >= kWeight.size() &&
                      name.substr(name.size() - kWeight.size()) == kWeight;
  return weight && name.find(".zll.") == std::string_view::npos;
}

std::size_t frontend_parameter_count(const EncoderConfig& config) {
  if (config.frontend.kind == FrontendKind::Identity) return 0;
  std::size_t n = 0, c_in = config.input_dim;
  for (const auto& l : config.frontend.conv_layers) {
    n += l.kernel * c_in * l.channels + l.channels;
    c_in = l.channels;
  }
  return n;
}

std::size_t block_parameter_count(std::size_t d, std::size_t d_ffn) {
  return (4 * d * d + 4 * d) + (2 * d * d_ffn + d_ffn + d) + 4 * d;
}

std::size_t head_parameter_count(std::size_t d_model, std::size_t n_classes) {
  return d_model * n_classes + n_classes;
}

std::size_t expected_parameter_count(const EncoderConfig& c) {
  return frontend_parameter_count(c) + c.n_blocks * block_parameter_count(c.d_model, c.d_ffn) +
         head_parameter_count(c.d_model, c.n_classes);
}

void add_block_parameters(ParameterStore& store, const std::string& pre, std::size_t d,
                          std::size_t d_ffn, double init_std, Rng& rng) {
  store.add(pre + ".ln1.gain", Tensor({d}, 1.0), false);
  store.add(pre + ".ln1.shift", Tensor({d}), false);
  for (const char* proj : {"q", "k", "v", "o"}) {
    store.add(pre + ".attn." + proj + ".weight", truncated_normal({d, d}, init_std, rng), true);
    store.add(pre + ".attn." + proj + ".bias", Tensor({d}), false);
  }
  store.add(pre + ".ln2.gain", Tensor({d}, 1.0), false);
  store.add(pre + ".ln2.shift", Tensor({d}), false);
  store.add(pre + ".ffn.in.weight", truncated_normal({d, d_ffn}, init_std, rng), true);
  store.add(pre + ".ffn.in.bias", Tensor({d_ffn}), false);
  store.add(pre + ".ffn.out.weight", truncated_normal({d_ffn, d}, init_std, rng), true);
  store.add(pre + ".ffn.out.bias", Tensor({d}), false);
}

EncoderModel build_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderModel model;
  model.config = config;
  Rng rng(seed);

  if (config.frontend.kind == FrontendKind::Conv) {
    std::size_t c_in = config.input_dim;
    for (std::size_t i = 0; i < config.frontend.conv_layers.size(); ++i) {
      const auto& l = config.frontend.conv_layers[i];
      auto& w = model.store.add(conv_prefix(i) + ".weight",
                                truncated_normal({l.kernel * c_in, l.channels}, config.init_std, rng),
                                true);
      auto& b = model.store.add(conv_prefix(i) + ".bias", Tensor({l.channels}), false);
      w.frozen = b.frozen = true;
      c_in = l.channels;
    }
  }
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    const std::string id = "block." + std::to_string(i);
    add_block_parameters(model.store, id, config.d_model, config.d_ffn, config.init_std, rng);
    model.blocks.push_back({id, BlockOrigin::Original, i, true});
  }
  model.store.add("head.weight",
                  truncated_normal({config.d_model, config.n_classes}, config.init_std, rng), true);
  model.store.add("head.bias", Tensor({config.n_classes}), false);
  model.rng_state = rng.state();
  return model;
}

void reinit_head(EncoderModel& model, std::size_t n_classes) {
  if (n_classes < 2) fail(ErrorKind::Config, "n_classes must be >= 2");
  Rng rng(model.rng_state);
  const std::size_t d = model.config.d_model;
  for (const char* name : {"head.weight", "head.bias"}) {
    Parameter& p = model.store.get(name);
    const bool w = std::string_view(name) == "head.weight";
    p.value = w ? truncated_normal({d, n_classes}, model.config.init_std, rng) : Tensor({n_classes});
    p.grad = Tensor(p.value.shape());
    p.m = Tensor(p.value.shape());
    p.v = Tensor(p.value.shape());
    p.step = 0;
  }
  model.config.n_classes = n_classes;
  model.rng_state = rng.state();
}

void refresh_block_trainability(EncoderModel& model) {
  for (auto& b : model.blocks) {
    b.trainable = false;
    for (const auto& p : model.store) {
      if (starts_with_segment(p.name, b.id) && !p.frozen) {
        b.trainable = true;
        break;
      }
    }
  }
}

void apply_freeze_policy(EncoderModel& model, FreezePolicy policy) {
  for (auto& p : model.store) {
    if (is_frontend(p.name)) {
      p.frozen = true;
    } else if (is_head(p.name)) {
      p.frozen = false;
    } else {
      p.frozen = policy == FreezePolicy::HeadOnly;
    }
  }
  if (policy == FreezePolicy::FreezeOriginal) {
    for (const auto& b : model.blocks) {
      if (b.origin == BlockOrigin::Original) model.store.set_frozen_prefix(b.id, true);
    }
  }
  refresh_block_trainability(model);
}

std::size_t frontend_output_frames(const EncoderConfig& config, std::size_t n) {
  if (config.frontend.kind == FrontendKind::Identity) return n;
  for (const auto& l : config.frontend.conv_layers) {
    if (n < l.kernel) return 0;
    n = (n - l.kernel) / l.stride + 1;
  }
  return n;
}

Var conv_frontend(Tape& t, const EncoderModel& model, Var input) {
  const auto& cfg = model.config;
  if (cfg.frontend.kind == FrontendKind::Identity) {
    if (t.value(input).cols() != cfg.d_model) {
      fail(ErrorKind::Input, "identity frontend expects " + std::to_string(cfg.d_model) +
                                 "-dim frames, got " + shape_str(t.value(input).shape()));
    }
    return input;
  }
  Var x = input;
  for (std::size_t i = 0; i < cfg.frontend.conv_layers.size(); ++i) {
    const auto& l = cfg.frontend.conv_layers[i];
    Var w = t.param(model.store.get(conv_prefix(i) + ".weight"));
    Var b = t.param(model.store.get(conv_prefix(i) + ".bias"));
    x = ops::gelu(t, ops::conv1d(t, x, w, b, l.kernel, l.stride));
  }
  return x;
}

Var encoder_block_forward(Tape& t, const ParameterStore& s, const std::string& pre, Var x,
                          std::size_t heads, double ln_eps, std::span<const std::uint8_t> mask) {
  auto p = [&](const std::string& leaf) { return t.param(s.get(pre + "." + leaf)); };
  Var h1 = ops::layer_norm(t, x, p("ln1.gain"), p("ln1.shift"), ln_eps);
  Var attn = ops::multi_head_attention(t, h1, attention_params(t, s, pre), heads, mask);
  Var u = ops::add(t, x, attn);
  Var h2 = ops::layer_norm(t, u, p("ln2.gain"), p("ln2.shift"), ln_eps);
  Var f = ops::gelu(t, ops::linear(t, h2, p("ffn.in.weight"), p("ffn.in.bias")));
  Var ffn = ops::linear(t, f, p("ffn.out.weight"), p("ffn.out.bias"));
  return ops::add(t, u, ffn);
}

Var expanded_block_forward(Tape& t, const ParameterStore& s, const std::string& pre, Var x,
                           std::size_t heads, double ln_eps, std::span<const std::uint8_t> mask) {
  Var dup = encoder_block_forward(t, s, pre, x, heads, ln_eps, mask);
  Var zll = ops::linear(t, dup, t.param(s.get(pre + ".zll.weight")),
                        t.param(s.get(pre + ".zll.bias")));
  return ops::add(t, x, zll);
}

Var forward_tape(Tape& t, const EncoderModel& model, const Tensor& frames,
                 std::span<const std::uint8_t> mask, Var* input_var) {
  const auto& cfg = model.config;
  Tensor input = frames;
  if (input.rank() == 1 && cfg.input_dim == 1) input = Tensor({frames.numel(), 1}, frames.raw());
  if (input.rank() != 2 || input.cols() != cfg.input_dim) {
    fail(ErrorKind::Input, "expected [T, " + std::to_string(cfg.input_dim) + "] input, got " +
                               shape_str(frames.shape()));
  }
  const std::size_t T_in = input.shape()[0];
  if (T_in == 0) fail(ErrorKind::Input, "empty input (T == 0)");
  if (!input.all_finite()) fail(ErrorKind::Input, "non-finite input frames");
  if (!mask.empty() && mask.size() != T_in) {
    fail(ErrorKind::Input, "mask length " + std::to_string(mask.size()) +
                               " does not match frame count " + std::to_string(T_in));
  }

  Var in = input_var ? t.leaf(std::move(input)) : t.constant(std::move(input));
  if (input_var) *input_var = in;
  Var x = conv_frontend(t, model, in);
  std::size_t T = t.value(x).shape()[0];

  // Encoder-frame mask. For conv frontends the input mask must be a valid
  // prefix; the valid output frames are those computed from it.
  std::vector<std::uint8_t> enc_mask;
  if (!mask.empty()) {
    if (cfg.frontend.kind == FrontendKind::Identity) {
      enc_mask.assign(mask.begin(), mask.end());
    } else {
      const auto valid = static_cast<std::size_t>(
          std::find(mask.begin(), mask.end(), std::uint8_t{0}) - mask.begin());
      if (std::any_of(mask.begin() + static_cast<std::ptrdiff_t>(valid), mask.end(),
                      [](std::uint8_t m) { return m != 0; })) {
        fail(ErrorKind::Input, "conv frontend requires a prefix padding mask");
      }
      enc_mask.assign(T, 0);
      std::fill_n(enc_mask.begin(), std::min(T, frontend_output_frames(cfg, valid)), 1);
    }
  }
  if (T > cfg.frame_cap) {
    x = ops::slice_rows(t, x, cfg.frame_cap);
    T = cfg.frame_cap;
    if (!enc_mask.empty()) enc_mask.resize(T);
  }

  for (const auto& b : model.blocks) {
    x = b.origin == BlockOrigin::Original
            ? encoder_block_forward(t, model.store, b.id, x, cfg.n_heads, cfg.ln_eps, enc_mask)
            : expanded_block_forward(t, model.store, b.id, x, cfg.n_heads, cfg.ln_eps, enc_mask);
  }
  Var pooled = ops::mean_pool(t, x, enc_mask);
  return ops::linear(t, pooled, t.param(model.store.get("head.weight")),
                     t.param(model.store.get("head.bias")));
}

Tensor forward(const EncoderModel& model, const Tensor& frames,
               std::span<const std::uint8_t> mask) {
  Tape t(false);
  Var logits = forward_tape(t, model, frames, mask);
  return t.value(logits);
}

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

}  // namespace bbe
