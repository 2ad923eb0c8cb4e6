#pragma once

// Visual grounding scoring: bbox text parsing and IoU accuracy.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mvp {

/// Normalized box, 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1.
struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  bool valid() const;
  double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const BBox&) const = default;
};

struct ParsedBBox {
  BBox box;
  bool clamped = false;  // some coordinate was outside [0,1]
};

/// First "<bbox>[x1,y1,x2,y2]</bbox>" span in `text`. Coordinates are
/// clamped to [0,1] and swapped into order if reversed; either sets
/// `clamped`. Throws ParseError when no span parses.
ParsedBBox parse_bbox(std::string_view text);

/// "<bbox>[x1,y1,x2,y2]</bbox>" with each coordinate in shortest
/// round-trip decimal form.
std::string format_bbox(const BBox& box);

/// Intersection over union; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

/// Fraction of predictions that parse and have IoU strictly above
/// `threshold`. Throws ContractError on length mismatch.
double grounding_accuracy(const std::vector<std::string>& preds, const std::vector<BBox>& gts,
                          double threshold = 0.5);

struct GroundingItem {
  std::string id;
  std::string query;
  BBox gt_box;
  std::string pred_text;
};

/// Line-delimited {"id","query","gt_box":[x1,y1,x2,y2],"pred_text"}.
std::vector<GroundingItem> load_grounding_items(const std::filesystem::path& path);

struct GroundingVerdict {
  std::string id;
  std::optional<BBox> pred;  // empty on parse failure
  bool clamped = false;
  double iou = 0.0;
  bool correct = false;
};

struct GroundingReport {
  double threshold = 0.5;
  std::vector<GroundingVerdict> items;  // sorted by id
  std::size_t correct = 0;
  std::size_t parse_failures = 0;

  double accuracy() const { return items.empty() ? 0.0 : static_cast<double>(correct) / items.size(); }
  nlohmann::json to_json() const;
};

GroundingReport evaluate_grounding(const std::vector<GroundingItem>& items, double threshold = 0.5);

}  // namespace mvp
