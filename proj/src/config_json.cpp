#include "bbe/config_json.hpp"

#include <initializer_list>
#include <string_view>

#include "bbe/error.hpp"

namespace bbe {

using nlohmann::json;

namespace {

void require_object(const json& j, std::string_view what,
                    std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) fail(ErrorKind::Config, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto k : keys) known = known || k == key;
    if (!known) fail(ErrorKind::Config, "unknown key '" + key + "' in " + std::string(what));
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

const char* frontend_name(FrontendKind k) { return k == FrontendKind::Conv ? "conv" : "identity"; }

}  // namespace

void to_json(json& j, const ConvLayerSpec& c) {
  j = {{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}};
}

void from_json(const json& j, ConvLayerSpec& c) {
  require_object(j, "conv layer", {"channels", "kernel", "stride"});
  read(j, "channels", c.channels);
  read(j, "kernel", c.kernel);
  read(j, "stride", c.stride);
}

void to_json(json& j, const FrontendConfig& c) {
  j = {{"kind", frontend_name(c.kind)}, {"conv_layers", c.conv_layers}};
}

void from_json(const json& j, FrontendConfig& c) {
  require_object(j, "frontend", {"kind", "conv_layers"});
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "identity") {
      c.kind = FrontendKind::Identity;
    } else if (kind == "conv") {
      c.kind = FrontendKind::Conv;
    } else {
      fail(ErrorKind::Config, "unknown frontend kind '" + kind + "'");
    }
  }
  read(j, "conv_layers", c.conv_layers);
}

void to_json(json& j, const EncoderConfig& c) {
  j = {{"n_blocks", c.n_blocks}, {"d_model", c.d_model},     {"n_heads", c.n_heads},
       {"d_ffn", c.d_ffn},       {"n_classes", c.n_classes}, {"input_dim", c.input_dim},
       {"frame_cap", c.frame_cap}, {"ln_eps", c.ln_eps},     {"init_std", c.init_std},
       {"frontend", c.frontend}};
}

void from_json(const json& j, EncoderConfig& c) {
  require_object(j, "encoder config",
                 {"n_blocks", "d_model", "n_heads", "d_ffn", "n_classes", "input_dim", "frame_cap",
                  "ln_eps", "init_std", "frontend"});
  read(j, "n_blocks", c.n_blocks);
  read(j, "d_model", c.d_model);
  read(j, "n_heads", c.n_heads);
  read(j, "d_ffn", c.d_ffn);
  read(j, "n_classes", c.n_classes);
  read(j, "input_dim", c.input_dim);
  read(j, "frame_cap", c.frame_cap);
  read(j, "ln_eps", c.ln_eps);
  read(j, "init_std", c.init_std);
  read(j, "frontend", c.frontend);
}

void to_json(json& j, const AdamWConfig& c) {
  j = {{"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay}};
}

void from_json(const json& j, AdamWConfig& c) {
  require_object(j, "adamw config", {"beta1", "beta2", "epsilon", "learning_rate", "weight_decay"});
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"adamw", c.adamw},
       {"n_steps", c.n_steps},
       {"batch_size", c.batch_size},
       {"frame_cap", c.frame_cap},
       {"eval_every", c.eval_every},
       {"seed", c.seed},
       {"stage", to_string(c.stage)},
       {"freeze_policy", to_string(c.freeze_policy)},
       {"expand_multiplier", c.expand_multiplier},
       {"selection", to_string(c.selection)},
       {"preservation_probes", c.preservation_probes}};
}

void from_json(const json& j, TrainConfig& c) {
  require_object(j, "train config",
                 {"adamw", "n_steps", "batch_size", "frame_cap", "eval_every", "seed", "stage",
                  "freeze_policy", "expand_multiplier", "selection", "preservation_probes"});
  read(j, "adamw", c.adamw);
  read(j, "n_steps", c.n_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "frame_cap", c.frame_cap);
  read(j, "eval_every", c.eval_every);
  read(j, "seed", c.seed);
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  if (j.contains("freeze_policy")) {
    c.freeze_policy = parse_freeze_policy(j.at("freeze_policy").get<std::string>());
  }
  read(j, "expand_multiplier", c.expand_multiplier);
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  read(j, "preservation_probes", c.preservation_probes);
}

void to_json(json& j, const SplitOptions& c) {
  j = {{"frac_test", c.frac_test}, {"frac_val", c.frac_val}, {"seed", c.seed}};
}

void from_json(const json& j, SplitOptions& c) {
  require_object(j, "split options", {"frac_test", "frac_val", "seed"});
  read(j, "frac_test", c.frac_test);
  read(j, "frac_val", c.frac_val);
  read(j, "seed", c.seed);
}

void to_json(json& j, const SynthSpec& c) {
  j = {{"corpus_id", c.corpus_id},
       {"n_speakers", c.n_speakers},
       {"samples_per_speaker", c.samples_per_speaker},
       {"n_classes", c.n_classes},
       {"d", c.d},
       {"class_means_seed", c.class_means_seed},
       {"class_separation", c.class_separation},
       {"speaker_std", c.speaker_std},
       {"noise_std", c.noise_std},
       {"corpus_shift", c.corpus_shift},
       {"frames_per_second", c.frames_per_second},
       {"min_duration_s", c.min_duration_s},
       {"max_duration_s", c.max_duration_s},
       {"seed", c.seed},
       {"splits", c.splits}};
}

void from_json(const json& j, SynthSpec& c) {
  require_object(j, "synthetic corpus spec",
                 {"corpus_id", "n_speakers", "samples_per_speaker", "n_classes", "d",
                  "class_means_seed", "class_separation", "speaker_std", "noise_std",
                  "corpus_shift", "frames_per_second", "min_duration_s", "max_duration_s", "seed",
                  "splits"});
  read(j, "corpus_id", c.corpus_id);
  read(j, "n_speakers", c.n_speakers);
  read(j, "samples_per_speaker", c.samples_per_speaker);
  read(j, "n_classes", c.n_classes);
  read(j, "d", c.d);
  read(j, "class_means_seed", c.class_means_seed);
  read(j, "class_separation", c.class_separation);
  read(j, "speaker_std", c.speaker_std);
  read(j, "noise_std", c.noise_std);
  read(j, "corpus_shift", c.corpus_shift);
  read(j, "frames_per_second", c.frames_per_second);
  read(j, "min_duration_s", c.min_duration_s);
  read(j, "max_duration_s", c.max_duration_s);
  read(j, "seed", c.seed);
  read(j, "splits", c.splits);
}

void to_json(json& j, const ExpansionSpec& c) {
  j = {{"multiplier", c.multiplier},
       {"freeze_policy", to_string(c.freeze_policy)},
       {"zll_init", c.zll_init}};
}

void from_json(const json& j, ExpansionSpec& c) {
  require_object(j, "expansion spec", {"multiplier", "freeze_policy", "zll_init"});
  read(j, "multiplier", c.multiplier);
  if (j.contains("freeze_policy")) {
    c.freeze_policy = parse_freeze_policy(j.at("freeze_policy").get<std::string>());
  }
  read(j, "zll_init", c.zll_init);
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      fail(ErrorKind::Config, "override '" + o + "' is not key=value");
    }
    const std::string path = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (!node->is_object() || !node->contains(key)) {
        fail(ErrorKind::Config, "override '" + o + "': unknown key '" + path.substr(0, dot) + "'");
      }
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    *node = std::move(value);
  }
}

}  // namespace bbe
