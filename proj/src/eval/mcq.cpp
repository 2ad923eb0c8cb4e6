#include "mvp/eval/mcq.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mvp/errors.hpp"
#include "mvp/eval/adapter.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvp {

std::string_view dimension_name(Dimension dim) { return kDimensionNames[static_cast<std::size_t>(dim)]; }

std::optional<Dimension> parse_dimension(std::string_view name) {
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    if (kDimensionNames[i] == name) return static_cast<Dimension>(i);
  }
  return std::nullopt;
}

void MCQItem::validate() const {
  if (options.size() < kMinOptions || options.size() > kMaxOptions) {
    throw ContractError("item " + id + ": needs 2-6 options, has " + std::to_string(options.size()));
  }
  if (answer_index >= options.size()) throw ContractError("item " + id + ": answer_index out of range");
  std::set<std::string_view> seen(options.begin(), options.end());
  if (seen.size() != options.size()) throw ContractError("item " + id + ": options must be pairwise distinct");
}

char option_letter(std::size_t index) {
  if (index >= kMaxOptions) throw ContractError("option index " + std::to_string(index) + " is beyond letter F");
  return static_cast<char>('A' + index);
}

std::string render_prompt(const MCQItem& item) {
  std::string out = item.question;
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    out += '\n';
    out += option_letter(i);
    out += ". ";
    out += item.options[i];
  }
  out += '\n';
  out += kLetterInstruction;
  return out;
}

bool strict_letter_match(std::string_view raw, char expected) {
  if (expected < 'A' || expected > 'F') throw ContractError("expected letter must be in A-F");
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto first = raw.find_first_not_of(ws);
  if (first == std::string_view::npos) return false;
  const auto last = raw.find_last_not_of(ws);
  const auto body = raw.substr(first, last - first + 1);
  if (body.empty() || body[0] != expected) return false;
  return body.size() == 1 || (body.size() == 2 && body[1] == '.');
}

MCQItem rotate_by(const MCQItem& item, std::ptrdiff_t shift) {
  const auto n = static_cast<std::ptrdiff_t>(item.options.size());
  const auto s = ((shift % n) + n) % n;
  MCQItem out = item;
  for (std::ptrdiff_t i = 0; i < n; ++i) out.options[static_cast<std::size_t>((i + s) % n)] = item.options[static_cast<std::size_t>(i)];
  out.answer_index = static_cast<std::size_t>((static_cast<std::ptrdiff_t>(item.answer_index) + s) % n);
  return out;
}

std::vector<MCQItem> rotate_options(const MCQItem& item) {
  std::vector<MCQItem> variants;
  const auto n = item.options.size();
  for (std::size_t k = 0; k < n; ++k) {
    variants.push_back(rotate_by(item, static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(item.answer_index)));
  }
  return variants;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["adapter"] = adapter;
  j["items_total"] = overall.total;
  j["adapter_failures"] = adapter_failures;
  auto score_json = [](const Score& s) {
    return nlohmann::json{{"total", s.total},
                          {"plain_correct", s.plain_correct},
                          {"circular_correct", s.circular_correct},
                          {"plain_accuracy", s.plain_accuracy()},
                          {"circular_accuracy", s.circular_accuracy()}};
  };
  auto dims = nlohmann::json::array();
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    auto d = score_json(per_dimension[i]);
    d["dimension"] = kDimensionNames[i];
    dims.push_back(std::move(d));
  }
  j["per_dimension"] = std::move(dims);
  j["overall"] = score_json(overall);
  j["plain_minus_circular"] = bias_gap();
  auto counts = nlohmann::json::object();
  for (const auto& [n, c] : option_counts) counts[std::to_string(n)] = c;
  j["option_count_distribution"] = std::move(counts);
  auto trail = nlohmann::json::array();
  for (const auto& item : items) {
    auto rot = nlohmann::json::array();
    for (const auto& r : item.rotations) {
      nlohmann::json rj{{"expected", std::string(1, r.expected)}, {"raw", r.raw}, {"matched", r.matched}};
      if (!r.error.empty()) rj["error"] = r.error;
      rot.push_back(std::move(rj));
    }
    trail.push_back({{"id", item.id},
                     {"dimension", dimension_name(item.dimension)},
                     {"plain_correct", item.plain_correct},
                     {"circular_correct", item.circular_correct},
                     {"rotations", std::move(rot)}});
  }
  j["items"] = std::move(trail);
  return j;
}

std::string EvalReport::render_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "| Metric |";
  for (auto name : kDimensionNames) os << ' ' << name << " |";
  os << " OA |\n|---|";
  for (std::size_t i = 0; i <= kDimensionNames.size(); ++i) os << "---|";
  os << '\n';
  auto row = [&](const char* label, auto accessor) {
    os << "| " << label << " |";
    for (const auto& s : per_dimension) {
      if (s.total == 0) os << " - |";
      else os << ' ' << 100.0 * accessor(s) << " |";
    }
    os << ' ' << 100.0 * accessor(overall) << " |\n";
  };
  row("Circular", [](const Score& s) { return s.circular_accuracy(); });
  row("Plain", [](const Score& s) { return s.plain_accuracy(); });
  os << "\nPlain minus circular: " << 100.0 * bias_gap() << " points over " << overall.total << " items\n";
  return os.str();
}

EvalReport circular_evaluate(const std::vector<MCQItem>& items, ModelAdapter& adapter, EvalOptions options) {
  for (const auto& item : items) item.validate();
  MemoizingAdapter memo(adapter);
  std::vector<ItemVerdict> verdicts(items.size());

  const auto count = static_cast<std::int64_t>(items.size());
#ifdef _OPENMP
  const int threads = options.threads > 0 ? options.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
  for (std::int64_t idx = 0; idx < count; ++idx) {
    const auto& item = items[static_cast<std::size_t>(idx)];
    auto& v = verdicts[static_cast<std::size_t>(idx)];
    v.id = item.id;
    v.dimension = item.dimension;
    v.option_count = item.options.size();
    v.circular_correct = true;
    for (const auto& variant : rotate_options(item)) {
      RotationVerdict r;
      r.expected = option_letter(variant.answer_index);
      try {
        r.raw = memo.answer(render_prompt(variant));
        r.matched = strict_letter_match(r.raw, r.expected);
      } catch (const std::exception& e) {
        r.error = e.what();
        r.matched = false;
      }
      if (!r.matched) v.circular_correct = false;
      if (variant.answer_index == item.answer_index) v.plain_correct = r.matched;
      v.rotations.push_back(std::move(r));
    }
  }

  EvalReport report;
  report.adapter = adapter.name();
  for (auto& v : verdicts) {
    auto& dim = report.per_dimension[static_cast<std::size_t>(v.dimension)];
    for (Score* s : {&dim, &report.overall}) {
      ++s->total;
      s->plain_correct += v.plain_correct;
      s->circular_correct += v.circular_correct;
    }
    ++report.option_counts[v.option_count];
    for (const auto& r : v.rotations) report.adapter_failures += !r.error.empty();
  }
  std::stable_sort(verdicts.begin(), verdicts.end(), [](const ItemVerdict& a, const ItemVerdict& b) { return a.id < b.id; });
  report.items = std::move(verdicts);
  return report;
}

MCQItem mcq_item_from_json(const nlohmann::json& j) {
  MCQItem item;
  item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  item.question = j.at("question").get<std::string>();
  item.options = j.at("options").get<std::vector<std::string>>();
  const auto& ans = j.at("answer_index");
  if (!ans.is_number_integer() || ans.get<long long>() < 0) throw ContractError("answer_index must be a non-negative integer");
  item.answer_index = ans.get<std::size_t>();
  const auto dim_name = j.at("dimension").get<std::string>();
  const auto dim = parse_dimension(dim_name);
  if (!dim) throw ContractError("unknown dimension \"" + dim_name + "\"");
  item.dimension = *dim;
  item.validate();
  return item;
}

nlohmann::json mcq_item_to_json(const MCQItem& item) {
  return {{"id", item.id},
          {"question", item.question},
          {"options", item.options},
          {"answer_index", item.answer_index},
          {"dimension", dimension_name(item.dimension)}};
}

std::vector<MCQItem> load_mcq_items(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path.string(), 0, "cannot open file");
  std::vector<MCQItem> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto item = mcq_item_from_json(nlohmann::json::parse(line));
      if (!ids.insert(item.id).second) throw ContractError("duplicate id " + item.id);
      items.push_back(std::move(item));
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError(path.string(), line_no, e.what());
    }
  }
  if (items.empty()) throw InputError(path.string(), line_no, "no items");
  return items;
}

}  // namespace mvp
