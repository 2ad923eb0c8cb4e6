#include "mvp/corpus/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mvp/errors.hpp"
#include "mvp/eval/adapter.hpp"
#include "mvp/tensor/random.hpp"

namespace mvp {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(ws) - first + 1);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (is_word_byte(c)) {
      current += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

void Corpus::validate() const {
  std::set<std::string_view> ids;
  for (const auto& c : captions) {
    if (!ids.insert(c.id).second) throw ContractError("corpus " + name + ": duplicate id " + c.id);
    if (trim(c.text).empty()) throw ContractError("corpus " + name + ": caption " + c.id + " is blank");
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path.string(), 0, "cannot open file");
  Corpus corpus;
  corpus.name = path.stem().string();
  std::set<std::string> ids;
  std::optional<bool> jsonl;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto body = trim(line);
    if (body.empty()) continue;
    if (!jsonl) jsonl = body.front() == '{';
    try {
      Caption c;
      if (*jsonl) {
        const auto j = nlohmann::json::parse(body);
        c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        c.text = j.at("text").get<std::string>();
        if (j.contains("image")) c.image = j.at("image").get<std::string>();
      } else {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ContractError("expected id<TAB>text");
        c.id = std::string(trim(std::string_view(line).substr(0, tab)));
        auto rest = line.substr(tab + 1);
        if (const auto tab2 = rest.find('\t'); tab2 != std::string::npos) {
          c.image = rest.substr(tab2 + 1);
          rest.resize(tab2);
        }
        c.text = std::move(rest);
      }
      if (c.id.empty()) throw ContractError("empty id");
      if (trim(c.text).empty()) throw ContractError("blank caption text");
      if (!ids.insert(c.id).second) throw ContractError("duplicate id " + c.id);
      corpus.captions.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw InputError(path.string(), line_no, e.what());
    }
  }
  if (corpus.captions.empty()) throw InputError(path.string(), line_no, "no captions");
  return corpus;
}

double HashStubScorer::score(const std::string& caption, const std::string& image) {
  const auto h = mix_seed(seed_, fnv1a(caption, fnv1a(image) ^ 0x9e3779b97f4a7c15ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 100.0;
}

double SubprocessScorer::score(const std::string& caption, const std::string& image) {
  std::string flat = caption;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  const auto out = run_subprocess(command_, image + "\t" + flat + "\n");
  const auto line = trim(std::string_view(out).substr(0, out.find('\n')));
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
  if (ec != std::errc() || ptr != line.data() + line.size() || !std::isfinite(v)) {
    throw AdapterError("scorer returned \"" + std::string(line) + "\", expected a number");
  }
  return v;
}

Histogram::Histogram(std::vector<double> e) : edges(std::move(e)) {
  if (!edges.empty()) {
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
      throw ConfigError("histogram edges must be strictly increasing, at least two");
    }
    counts.assign(edges.size() - 1, 0);
  }
}

void Histogram::add(double value) {
  if (edges.empty()) throw ContractError("histogram has no bins");
  if (value < edges.front()) {
    ++underflow;
  } else if (value >= edges.back()) {
    ++overflow;
  } else {
    const auto it = std::upper_bound(edges.begin(), edges.end(), value);
    ++counts[static_cast<std::size_t>(it - edges.begin()) - 1];
  }
}

std::size_t Histogram::total() const {
  std::size_t n = underflow + overflow;
  for (auto c : counts) n += c;
  return n;
}

std::vector<double> default_length_edges() { return {0, 10, 20, 40, 60, 80, 100, 150, 200, 300, 500, 1000}; }

std::vector<double> default_score_edges() { return {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100}; }

CorpusMetrics CorpusReport::metrics() const {
  CorpusMetrics m;
  m.name = name;
  m.unique_words = static_cast<double>(unique_words);
  m.unique_trigrams = static_cast<double>(unique_trigrams);
  m.avg_length = avg_length;
  if (scores) m.mean_score = scores->mean;
  return m;
}

CorpusReport corpus_report(const Corpus& corpus, AlignmentScorer* scorer) {
  if (corpus.captions.empty()) throw ContractError("corpus_report: empty corpus");
  corpus.validate();

  const auto n = corpus.captions.size();
  std::vector<std::vector<std::string>> tokens(n);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    tokens[static_cast<std::size_t>(i)] = tokenize(corpus.captions[static_cast<std::size_t>(i)].text);
  }

  CorpusReport report;
  report.name = corpus.name;
  report.captions = n;
  report.length_histogram = Histogram(default_length_edges());
  std::unordered_set<std::string> words;
  std::unordered_set<std::string> trigrams;
  for (const auto& t : tokens) {
    report.total_words += t.size();
    report.length_histogram.add(static_cast<double>(t.size()));
    words.insert(t.begin(), t.end());
    for (std::size_t k = 0; k + 2 < t.size(); ++k) {
      // Tokens never contain a space, so the joined key is unambiguous.
      trigrams.insert(t[k] + ' ' + t[k + 1] + ' ' + t[k + 2]);
      ++report.trigram_positions;
    }
  }
  report.unique_words = words.size();
  report.unique_trigrams = trigrams.size();
  report.avg_length = static_cast<double>(report.total_words) / static_cast<double>(n);

  if (scorer) {
    // Summed in id order so the mean does not depend on caption order.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return corpus.captions[a].id < corpus.captions[b].id; });
    ScoreSummary s;
    s.scorer = scorer->name();
    s.histogram = Histogram(default_score_edges());
    double total = 0.0;
    for (auto i : order) {
      const auto& c = corpus.captions[i];
      const double v = scorer->score(c.text, c.image);
      total += v;
      s.histogram.add(v);
    }
    s.mean = total / static_cast<double>(n);
    report.scores = std::move(s);
  }
  return report;
}

namespace {

nlohmann::json histogram_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}, {"underflow", h.underflow}, {"overflow", h.overflow}};
}

Histogram histogram_from_json(const nlohmann::json& j) {
  Histogram h(j.at("edges").get<std::vector<double>>());
  h.counts = j.at("counts").get<std::vector<std::size_t>>();
  if (h.counts.size() + 1 != h.edges.size()) throw ParseError("histogram: counts/edges size mismatch");
  h.underflow = j.at("underflow").get<std::size_t>();
  h.overflow = j.at("overflow").get<std::size_t>();
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os.precision(17);
  os << "lo,hi,count\n";
  os << "-inf," << h.edges.front() << ',' << h.underflow << '\n';
  for (std::size_t i = 0; i < h.counts.size(); ++i) os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  os << h.edges.back() << ",inf," << h.overflow << '\n';
  return os.str();
}

}  // namespace

nlohmann::json CorpusReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["tokenizer_version"] = tokenizer_version;
  j["trigram_unit"] = "word";
  j["captions"] = captions;
  j["total_words"] = total_words;
  j["unique_words"] = unique_words;
  j["unique_trigrams"] = unique_trigrams;
  j["trigram_positions"] = trigram_positions;
  j["avg_length"] = avg_length;
  j["length_histogram"] = histogram_json(length_histogram);
  if (scores) {
    j["scores"] = {{"scorer", scores->scorer}, {"mean", scores->mean}, {"histogram", histogram_json(scores->histogram)}};
  } else {
    j["scores"] = nullptr;
  }
  return j;
}

CorpusReport CorpusReport::from_json(const nlohmann::json& j) {
  CorpusReport r;
  r.name = j.at("name").get<std::string>();
  r.tokenizer_version = j.at("tokenizer_version").get<std::string>();
  r.captions = j.at("captions").get<std::size_t>();
  r.total_words = j.at("total_words").get<std::size_t>();
  r.unique_words = j.at("unique_words").get<std::size_t>();
  r.unique_trigrams = j.at("unique_trigrams").get<std::size_t>();
  r.trigram_positions = j.at("trigram_positions").get<std::size_t>();
  r.avg_length = j.at("avg_length").get<double>();
  r.length_histogram = histogram_from_json(j.at("length_histogram"));
  if (const auto& s = j.at("scores"); !s.is_null()) {
    r.scores = ScoreSummary{s.at("scorer").get<std::string>(), s.at("mean").get<double>(),
                            histogram_from_json(s.at("histogram"))};
  }
  return r;
}

std::string CorpusReport::length_csv() const { return histogram_csv(length_histogram); }

std::string CorpusReport::score_csv() const {
  if (!scores) throw ContractError("report has no alignment scores");
  return histogram_csv(scores->histogram);
}

CorpusComparison compare_reports(const CorpusMetrics& a, const CorpusMetrics& b) {
  CorpusComparison cmp;
  cmp.name_a = a.name;
  cmp.name_b = b.name;
  auto row = [&](std::string metric, std::optional<double> va, std::optional<double> vb) {
    MetricComparison m{std::move(metric), va, vb, std::nullopt, std::nullopt};
    if (va && vb) {
      m.delta = *vb - *va;
      if (*va == *vb) m.ratio = 1.0;
      else if (*va != 0.0) m.ratio = *vb / *va;
    }
    cmp.rows.push_back(std::move(m));
  };
  row("unique_words", a.unique_words, b.unique_words);
  row("unique_trigrams", a.unique_trigrams, b.unique_trigrams);
  row("avg_length", a.avg_length, b.avg_length);
  row("mean_score", a.mean_score, b.mean_score);
  return cmp;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string format_value(std::optional<double> v) {
  if (!v) return "-";
  char buf[64];
  const double x = *v;
  if (std::fabs(x) >= 1e6) std::snprintf(buf, sizeof buf, "%.2e", x);
  else if (x == std::round(x)) std::snprintf(buf, sizeof buf, "%.0f", x);
  else std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string format_ratio(std::optional<double> v) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

nlohmann::json CorpusComparison::to_json() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"metric", r.metric},
                         {"a", opt_json(r.a)},
                         {"b", opt_json(r.b)},
                         {"ratio", opt_json(r.ratio)},
                         {"delta", opt_json(r.delta)}});
  }
  return {{"a", name_a}, {"b", name_b}, {"metrics", std::move(rows_json)}};
}

std::string CorpusComparison::render_table() const {
  std::ostringstream os;
  os << "| Dataset | No. of unique words | No. of unique trigrams | Average sentence length | Average alignment score |\n";
  os << "|---|---|---|---|---|\n";
  auto line = [&](const std::string& label, auto pick, auto fmt) {
    os << "| " << label << " |";
    for (const auto& r : rows) os << ' ' << fmt(pick(r)) << " |";
    os << '\n';
  };
  line(name_a, [](const MetricComparison& r) { return r.a; }, format_value);
  line(name_b, [](const MetricComparison& r) { return r.b; }, format_value);
  line("ratio (b/a)", [](const MetricComparison& r) { return r.ratio; }, format_ratio);
  line("delta (b-a)", [](const MetricComparison& r) { return r.delta; }, format_value);
  return os.str();
}

std::vector<CorpusMetrics> load_reference_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path.string(), 0, "cannot open file");
  try {
    const auto j = nlohmann::json::parse(is);
    std::vector<CorpusMetrics> out;
    for (const auto& c : j.at("corpora")) {
      CorpusMetrics m;
      m.name = c.at("name").get<std::string>();
      m.unique_words = c.at("unique_words").get<double>();
      m.unique_trigrams = c.at("unique_trigrams").get<double>();
      m.avg_length = c.at("avg_length").get<double>();
      if (c.contains("mean_score") && !c.at("mean_score").is_null()) m.mean_score = c.at("mean_score").get<double>();
      out.push_back(std::move(m));
    }
    return out;
  } catch (const std::exception& e) {
    throw InputError(path.string(), 0, e.what());
  }
}

}  // namespace mvp
