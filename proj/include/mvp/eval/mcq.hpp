#pragma once

// Multiple-choice evaluation: strict letter answers and circular rotation.

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mvp {

class ModelAdapter;

enum class Dimension {
  Identity,
  Color,
  Orientation,
  Shape,
  Area,
  Resolution,
  Modality,
  Location,
  Distance,
  Quantity,
  Reasoning,
};

/// Report column order.
inline constexpr std::array<std::string_view, 11> kDimensionNames = {
    "Identity", "Color",    "Orientation", "Shape",    "Area",     "Resolution",
    "Modality", "Location", "Distance",    "Quantity", "Reasoning",
};

std::string_view dimension_name(Dimension dim);
std::optional<Dimension> parse_dimension(std::string_view name);

inline constexpr std::size_t kMinOptions = 2;
inline constexpr std::size_t kMaxOptions = 6;  // letters A–F

inline constexpr std::string_view kLetterInstruction =
    "Only answer with the letter corresponding to the given choices, such as A., B., etc.";

struct MCQItem {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::size_t answer_index = 0;
  Dimension dimension = Dimension::Identity;

  /// Throws ContractError naming the broken invariant.
  void validate() const;
  bool operator==(const MCQItem&) const = default;
};

/// 'A' + index; throws ContractError past 'F'.
char option_letter(std::size_t index);

/// Question, one "X. option" line per option, then the instruction line.
/// Lines are '\n'-separated with no trailing newline.
std::string render_prompt(const MCQItem& item);

/// True iff `raw`, with surrounding whitespace trimmed, is exactly the
/// letter or the letter followed by one '.'.
bool strict_letter_match(std::string_view raw, char expected);

/// Cyclic shift: option i moves to (i + shift) mod n.
MCQItem rotate_by(const MCQItem& item, std::ptrdiff_t shift);

/// n variants; variant k has the correct answer at position k.
std::vector<MCQItem> rotate_options(const MCQItem& item);

struct RotationVerdict {
  char expected = 'A';
  std::string raw;
  bool matched = false;
  std::string error;  // adapter failure message, empty on success
};

struct ItemVerdict {
  std::string id;
  Dimension dimension = Dimension::Identity;
  std::size_t option_count = 0;
  std::vector<RotationVerdict> rotations;  // indexed by correct position
  bool plain_correct = false;              // original ordering only
  bool circular_correct = false;           // every rotation
};

struct Score {
  std::size_t total = 0;
  std::size_t plain_correct = 0;
  std::size_t circular_correct = 0;

  double plain_accuracy() const { return total ? static_cast<double>(plain_correct) / total : 0.0; }
  double circular_accuracy() const { return total ? static_cast<double>(circular_correct) / total : 0.0; }
};

struct EvalReport {
  std::string adapter;
  std::vector<ItemVerdict> items;  // sorted by id
  std::array<Score, kDimensionNames.size()> per_dimension{};
  Score overall;
  std::map<std::size_t, std::size_t> option_counts;
  std::size_t adapter_failures = 0;

  /// Plain minus circular overall accuracy.
  double bias_gap() const { return overall.plain_accuracy() - overall.circular_accuracy(); }
  nlohmann::json to_json() const;
  /// Markdown table: one row per dimension in report column order, then OA.
  std::string render_table() const;
};

struct EvalOptions {
  /// 0 picks the OpenMP default; 1 forces serial evaluation.
  int threads = 0;
};

/// Item is correct iff the adapter's answer strictly matches on every
/// rotation. Adapter failures mark the rotation wrong and are recorded.
EvalReport circular_evaluate(const std::vector<MCQItem>& items, ModelAdapter& adapter, EvalOptions options = {});

/// Line-delimited {"id","question","options","answer_index","dimension"}.
/// Malformed lines raise InputError with file and line.
std::vector<MCQItem> load_mcq_items(const std::filesystem::path& path);
MCQItem mcq_item_from_json(const nlohmann::json& j);
nlohmann::json mcq_item_to_json(const MCQItem& item);

}  // namespace mvp
