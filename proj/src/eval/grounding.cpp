#include "mvp/eval/grounding.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <regex>
#include <set>

#include "mvp/errors.hpp"

namespace mvp {

bool BBox::valid() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  return unit(x1) && unit(y1) && unit(x2) && unit(y2) && x1 <= x2 && y1 <= y2;
}

namespace {

double parse_decimal(const std::string& s) {
  double v = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad number \"" + s + "\"");
  return v;
}

}  // namespace

ParsedBBox parse_bbox(std::string_view text) {
  static const std::regex pattern(
      R"(<bbox>\s*\[\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,)"
      R"(\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,)"
      R"(\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,)"
      R"(\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*\]\s*</bbox>)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, pattern)) throw ParseError("no <bbox>[x1,y1,x2,y2]</bbox> span");

  std::array<double, 4> v{};
  ParsedBBox out;
  for (std::size_t i = 0; i < 4; ++i) {
    v[i] = parse_decimal(m[i + 1].str());
    const double c = std::clamp(v[i], 0.0, 1.0);
    if (c != v[i]) out.clamped = true;
    v[i] = c;
  }
  if (v[0] > v[2]) std::swap(v[0], v[2]), out.clamped = true;
  if (v[1] > v[3]) std::swap(v[1], v[3]), out.clamped = true;
  out.box = {v[0], v[1], v[2], v[3]};
  return out;
}

std::string format_bbox(const BBox& box) {
  std::string out = "<bbox>[";
  const std::array<double, 4> v = {box.x1, box.y1, box.x2, box.y2};
  for (std::size_t i = 0; i < 4; ++i) {
    if (i) out += ',';
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v[i]);
    out.append(buf, res.ptr);
  }
  out += "]</bbox>";
  return out;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double grounding_accuracy(const std::vector<std::string>& preds, const std::vector<BBox>& gts, double threshold) {
  if (preds.size() != gts.size()) {
    throw ContractError("grounding_accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(gts.size()) + " ground truths");
  }
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    try {
      if (iou(parse_bbox(preds[i]).box, gts[i]) > threshold) ++correct;
    } catch (const ParseError&) {
    }
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::vector<GroundingItem> load_grounding_items(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path.string(), 0, "cannot open file");
  std::vector<GroundingItem> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GroundingItem item;
      item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      item.query = j.at("query").get<std::string>();
      const auto box = j.at("gt_box").get<std::vector<double>>();
      if (box.size() != 4) throw ContractError("gt_box needs 4 coordinates");
      item.gt_box = {box[0], box[1], box[2], box[3]};
      if (!item.gt_box.valid()) throw ContractError("gt_box outside [0,1] or reversed");
      item.pred_text = j.at("pred_text").get<std::string>();
      if (!ids.insert(item.id).second) throw ContractError("duplicate id " + item.id);
      items.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw InputError(path.string(), line_no, e.what());
    }
  }
  if (items.empty()) throw InputError(path.string(), line_no, "no items");
  return items;
}

GroundingReport evaluate_grounding(const std::vector<GroundingItem>& items, double threshold) {
  GroundingReport report;
  report.threshold = threshold;
  for (const auto& item : items) {
    GroundingVerdict v;
    v.id = item.id;
    try {
      const auto parsed = parse_bbox(item.pred_text);
      v.pred = parsed.box;
      v.clamped = parsed.clamped;
      v.iou = iou(parsed.box, item.gt_box);
      v.correct = v.iou > threshold;
    } catch (const ParseError&) {
      ++report.parse_failures;
    }
    report.correct += v.correct;
    report.items.push_back(std::move(v));
  }
  std::stable_sort(report.items.begin(), report.items.end(),
                   [](const GroundingVerdict& a, const GroundingVerdict& b) { return a.id < b.id; });
  return report;
}

nlohmann::json GroundingReport::to_json() const {
  nlohmann::json j;
  j["threshold"] = threshold;
  j["items_total"] = items.size();
  j["correct"] = correct;
  j["parse_failures"] = parse_failures;
  j["accuracy"] = accuracy();
  auto trail = nlohmann::json::array();
  for (const auto& v : items) {
    nlohmann::json r{{"id", v.id}, {"iou", v.iou}, {"correct", v.correct}};
    if (v.pred) r["pred_box"] = {v.pred->x1, v.pred->y1, v.pred->x2, v.pred->y2};
    else r["pred_box"] = nullptr;
    if (v.clamped) r["clamped"] = true;
    trail.push_back(std::move(r));
  }
  j["items"] = std::move(trail);
  return j;
}

}  // namespace mvp
