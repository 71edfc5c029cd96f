#include "bbe/label_map.hpp"

#include <cctype>
#include <vector>

#include "bbe/error.hpp"
#include "bbe/io.hpp"

namespace bbe {
namespace {

constexpr const char* kArousalNames[] = {"la", "ha"};
constexpr const char* kValenceNames[] = {"neg", "neu", "pos"};

struct DefaultEntry {
  const char* label;
  Arousal arousal;
  Valence valence;
  const char* note;
};

// Quadrant assignments follow the affect circumplex (activation x pleasantness).
constexpr DefaultEntry kDefaults[] = {
    {"neutral", Arousal::Low, Valence::Neutral, "circumplex origin, read as low activation"},
    {"anger", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"angry", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"fear", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"fearful", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"disgust", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"anxiety", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"frustration", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"stress", Arousal::High, Valence::Negative, "activated, unpleasant"},
    {"sadness", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"sad", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"boredom", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"bored", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"contempt", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"shame", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"guilt", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"despair", Arousal::Low, Valence::Negative, "deactivated, unpleasant"},
    {"surprise", Arousal::High, Valence::Neutral, "activated, valence ambiguous"},
    {"surprised", Arousal::High, Valence::Neutral, "activated, valence ambiguous"},
    {"happiness", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"happy", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"joy", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"excitement", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"elation", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"amusement", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"pride", Arousal::High, Valence::Positive, "activated, pleasant"},
    {"calm", Arousal::Low, Valence::Positive, "deactivated, pleasant"},
    {"relief", Arousal::Low, Valence::Positive, "deactivated, pleasant"},
    {"contentment", Arousal::Low, Valence::Positive, "deactivated, pleasant"},
    {"pleasure", Arousal::Low, Valence::Positive, "deactivated, pleasant"},
    {"tired", Arousal::Low, Valence::Neutral, "deactivated, near-neutral valence"},
    {"sleepy", Arousal::Low, Valence::Neutral, "deactivated, near-neutral valence"},
};

std::vector<std::string> split_commas(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string SixClass::name() const {
  return std::string(kArousalNames[static_cast<int>(arousal)]) + "-" +
         kValenceNames[static_cast<int>(valence)];
}

SixClass circumplex_to_class(Arousal arousal, Valence valence) noexcept {
  return SixClass{arousal, valence};
}

SixClass class_from_index(std::size_t index) {
  if (index >= kNumSixClasses) {
    fail(ErrorKind::Label, "class index " + std::to_string(index) + " out of range");
  }
  return {static_cast<Arousal>(index / 3), static_cast<Valence>(index % 3)};
}

std::string normalize_label(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

MappingTable MappingTable::defaults() {
  MappingTable t;
  for (const auto& e : kDefaults) t.set(e.label, {e.arousal, e.valence}, e.note);
  // Canonical class names map onto themselves.
  for (std::size_t i = 0; i < kNumSixClasses; ++i) {
    const SixClass c = class_from_index(i);
    t.set(c.name(), c, "canonical class name");
  }
  return t;
}

void MappingTable::set(std::string_view raw_label, SixClass cls, std::string note) {
  entries_[normalize_label(raw_label)] = MappingEntry{cls, std::move(note)};
}

const MappingEntry* MappingTable::find(std::string_view raw_label) const {
  auto it = entries_.find(normalize_label(raw_label));
  return it == entries_.end() ? nullptr : &it->second;
}

SixClass map_emotion(std::string_view raw_label, const MappingTable& table) {
  if (const auto* e = table.find(raw_label)) return e->cls;
  fail(ErrorKind::Label, "unmapped label '" + std::string(raw_label) + "'");
}

MappingTable parse_mapping_text(std::string_view text, MappingTable base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (normalize_label(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto where = [&] { return "mapping line " + std::to_string(line_no) + ": "; };
    auto fields = split_commas(line);
    if (fields.size() != 3) fail(ErrorKind::Parse, where() + "expected raw_label,arousal,valence");
    const std::string label = normalize_label(fields[0]);
    const std::string a = normalize_label(fields[1]);
    const std::string v = normalize_label(fields[2]);
    if (label.empty()) fail(ErrorKind::Parse, where() + "empty label");
    Arousal arousal;
    if (a == "low") {
      arousal = Arousal::Low;
    } else if (a == "high") {
      arousal = Arousal::High;
    } else {
      fail(ErrorKind::Parse, where() + "invalid arousal token '" + a + "'");
    }
    Valence valence;
    if (v == "negative") {
      valence = Valence::Negative;
    } else if (v == "neutral") {
      valence = Valence::Neutral;
    } else if (v == "positive") {
      valence = Valence::Positive;
    } else {
      fail(ErrorKind::Parse, where() + "invalid valence token '" + v + "'");
    }
    base.set(label, {arousal, valence}, "override, line " + std::to_string(line_no));
    if (end == text.size()) break;
  }
  return base;
}

MappingTable load_mapping_table(const std::filesystem::path& path, MappingTable base) {
  return parse_mapping_text(read_file(path), std::move(base));
}

}  // namespace bbe
