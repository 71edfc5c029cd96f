#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace bbe {

enum class Arousal { Low = 0, High = 1 };
enum class Valence { Negative = 0, Neutral = 1, Positive = 2 };

inline constexpr std::size_t kNumSixClasses = 6;

// One of the six arousal x valence classes; index = arousal * 3 + valence.
struct SixClass {
  Arousal arousal = Arousal::Low;
  Valence valence = Valence::Neutral;

  std::size_t index() const noexcept {
    return static_cast<std::size_t>(arousal) * 3 + static_cast<std::size_t>(valence);
  }
  // Canonical short name, e.g. "ha-neg".
  std::string name() const;

  bool operator==(const SixClass&) const = default;
};

SixClass circumplex_to_class(Arousal arousal, Valence valence) noexcept;
SixClass class_from_index(std::size_t index);

// Lower-cased, trimmed, inner whitespace runs collapsed to one space.
std::string normalize_label(std::string_view raw);

struct MappingEntry {
  SixClass cls;
  std::string note;
};

class MappingTable {
 public:
  // Built-in circumplex table (basic emotions plus common corpus labels).
  static MappingTable defaults();

  void set(std::string_view raw_label, SixClass cls, std::string note = {});
  const MappingEntry* find(std::string_view raw_label) const;
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<std::string, MappingEntry>& entries() const noexcept { return entries_; }

 private:
  std::map<std::string, MappingEntry> entries_;
};

// Unknown labels are a Label error naming the label.
SixClass map_emotion(std::string_view raw_label, const MappingTable& table);

// Parses `raw_label,arousal,valence` lines (with `#` comments) and merges them
// over `base`; later lines win.
MappingTable parse_mapping_text(std::string_view text, MappingTable base = MappingTable::defaults());
MappingTable load_mapping_table(const std::filesystem::path& path,
                                MappingTable base = MappingTable::defaults());

}  // namespace bbe
