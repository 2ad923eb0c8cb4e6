#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>

#include "mvp/errors.hpp"
#include "mvp/eval/adapter.hpp"
#include "mvp/eval/mcq.hpp"
#include "mvp/tensor/random.hpp"

using namespace mvp;

namespace {

const std::string kFixtures = std::string(MVP_FIXTURE_DIR) + "/mcq/";

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

MCQItem item(std::string id, std::size_t n, std::size_t answer, Dimension dim = Dimension::Identity) {
  MCQItem it;
  it.id = std::move(id);
  it.question = "Question " + it.id + "?";
  for (std::size_t i = 0; i < n; ++i) it.options.push_back(it.id + "-option-" + std::to_string(i));
  it.answer_index = answer;
  it.dimension = dim;
  return it;
}

// 4-option items whose correct position cycles A, B, C, D.
std::vector<MCQItem> balanced(std::size_t count) {
  std::vector<MCQItem> items;
  for (std::size_t i = 0; i < count; ++i) items.push_back(item("b" + std::to_string(1000 + i), 4, i % 4));
  return items;
}

// Answers from a fixed table of per-letter probabilities, hashed per prompt.
class BiasedAdapter final : public ModelAdapter {
 public:
  BiasedAdapter(std::uint64_t seed, std::vector<double> weights) : seed_(seed), weights_(std::move(weights)) {}
  std::string answer(const std::string& prompt) override {
    Rng rng(mix_seed(seed_, std::hash<std::string>{}(prompt)));
    std::discrete_distribution<int> pick(weights_.begin(), weights_.end());
    return std::string(1, static_cast<char>('A' + pick(rng)));
  }
  std::string name() const override { return "biased"; }

 private:
  std::uint64_t seed_;
  std::vector<double> weights_;
};

class CountingAdapter final : public ModelAdapter {
 public:
  std::string answer(const std::string&) override {
    ++calls;
    return "A";
  }
  std::string name() const override { return "counting"; }
  std::atomic<int> calls{0};
};

class FailingAdapter final : public ModelAdapter {
 public:
  std::string answer(const std::string& prompt) override {
    if (prompt.find("fail") != std::string::npos) throw AdapterError("backend unavailable");
    return "A";
  }
  std::string name() const override { return "failing"; }
};

}  // namespace

TEST(Prompt, TwoOptionsGiveExactlyTwoLetterLines) {
  const auto text = render_prompt(item("x", 2, 0));
  std::istringstream is(text);
  std::string line;
  int letters = 0;
  while (std::getline(is, line)) {
    if (line.size() >= 2 && line[1] == '.' && line[0] >= 'A' && line[0] <= 'F') ++letters;
  }
  EXPECT_EQ(letters, 2);
  EXPECT_NE(text.find("\nA. "), std::string::npos);
  EXPECT_NE(text.find("\nB. "), std::string::npos);
  EXPECT_EQ(text.substr(text.rfind('\n') + 1), kLetterInstruction);
}

TEST(Prompt, GoldenFile) {
  const auto j = nlohmann::json::parse(slurp(kFixtures + "golden_item.json"));
  EXPECT_EQ(render_prompt(mcq_item_from_json(j)), slurp(kFixtures + "golden_prompt.txt"));
}

TEST(Prompt, InjectiveOverDistinctItemsAndFreeOfIds) {
  auto a = item("one", 3, 0), b = a;
  a.id = "id-7731";
  b.id = "id-9914";
  EXPECT_EQ(render_prompt(a), render_prompt(b));
  EXPECT_EQ(render_prompt(a).find("id-7731"), std::string::npos);
  b.options[1] = "changed";
  EXPECT_NE(render_prompt(a), render_prompt(b));
  b = a;
  b.question = "Other?";
  EXPECT_NE(render_prompt(a), render_prompt(b));
}

TEST(StrictMatch, DecisionTable) {
  struct Row {
    const char* raw;
    char expected;
    bool match;
  };
  const Row table[] = {
      {"B", 'B', true},
      {"B.", 'B', true},
      {"  B.\n", 'B', true},
      {"\tC", 'C', true},
      {"b", 'B', false},
      {"B..", 'B', false},
      {"B)", 'B', false},
      {"(B)", 'B', false},
      {"A", 'B', false},
      {"A. industrial", 'A', false},
      {"A) foo", 'A', false},
      {"The answer is A", 'A', false},
      {"residential but not industrial", 'A', false},
      {"residential but not industrial", 'B', false},
      {"", 'A', false},
      {".", 'A', false},
      {"A B", 'A', false},
      {"AB", 'A', false},
      {"F.", 'F', true},
  };
  for (const auto& row : table) {
    EXPECT_EQ(strict_letter_match(row.raw, row.expected), row.match) << '"' << row.raw << "\" vs " << row.expected;
  }
  EXPECT_THROW(strict_letter_match("G", 'G'), ContractError);
}

TEST(Items, ValidationRejectsBrokenInvariants) {
  EXPECT_NO_THROW(item("ok", 6, 5).validate());
  EXPECT_THROW(item("one", 1, 0).validate(), ContractError);
  EXPECT_THROW(item("seven", 7, 0).validate(), ContractError);
  EXPECT_THROW(item("range", 3, 3).validate(), ContractError);
  auto dup = item("dup", 3, 0);
  dup.options[2] = dup.options[0];
  EXPECT_THROW(dup.validate(), ContractError);
  EXPECT_THROW(option_letter(6), ContractError);
  EXPECT_EQ(option_letter(5), 'F');
}

TEST(Items, DimensionNamesRoundTripInReportOrder) {
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    const auto dim = parse_dimension(kDimensionNames[i]);
    ASSERT_TRUE(dim.has_value());
    EXPECT_EQ(static_cast<std::size_t>(*dim), i);
    EXPECT_EQ(dimension_name(*dim), kDimensionNames[i]);
  }
  EXPECT_FALSE(parse_dimension("Colour").has_value());
}

TEST(Rotation, CorrectLetterCyclesThroughPositions) {
  auto it = item("r", 4, 0);
  const auto variants = rotate_options(it);
  ASSERT_EQ(variants.size(), 4u);
  std::string letters;
  for (const auto& v : variants) letters += option_letter(v.answer_index);
  EXPECT_EQ(letters, "ABCD");
  for (const auto& v : variants) EXPECT_EQ(v.options[v.answer_index], it.options[0]);
  EXPECT_EQ(rotate_options(item("two", 2, 1)).size(), 2u);
}

TEST(Rotation, MultisetPreservedAndInverseRecoversItem) {
  for (std::size_t n = 2; n <= 6; ++n) {
    for (std::size_t answer = 0; answer < n; ++answer) {
      const auto it = item("m", n, answer);
      auto sorted_original = it.options;
      std::sort(sorted_original.begin(), sorted_original.end());
      const auto variants = rotate_options(it);
      ASSERT_EQ(variants.size(), n);
      std::vector<int> hosted(n, 0);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& v = variants[k];
        EXPECT_EQ(v.answer_index, k);
        auto sorted = v.options;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(sorted, sorted_original);
        ++hosted[v.answer_index];
        const auto back = rotate_by(v, static_cast<std::ptrdiff_t>(answer) - static_cast<std::ptrdiff_t>(k));
        EXPECT_EQ(back, it);
      }
      EXPECT_TRUE(std::all_of(hosted.begin(), hosted.end(), [](int h) { return h == 1; }));
    }
  }
}

TEST(Circular, ConstantLetterOnBalancedSet) {
  const auto items = balanced(4);
  ConstantAdapter a("A");
  const auto report = circular_evaluate(items, a);
  EXPECT_EQ(report.overall.circular_accuracy(), 0.0);
  EXPECT_EQ(report.overall.plain_accuracy(), 0.25);
  for (const auto& v : report.items) {
    ASSERT_EQ(v.rotations.size(), 4u);
    EXPECT_TRUE(v.rotations[0].matched);
    EXPECT_FALSE(v.rotations[1].matched || v.rotations[2].matched || v.rotations[3].matched);
  }
}

TEST(Circular, OracleScoresOneAndFullTextScoresZero) {
  std::vector<MCQItem> items;
  for (std::size_t n = 2; n <= 6; ++n)
    for (std::size_t a = 0; a < n; ++a)
      items.push_back(item("o" + std::to_string(n) + std::to_string(a), n, a, static_cast<Dimension>((n + a) % 11)));
  OracleAdapter oracle(items);
  const auto good = circular_evaluate(items, oracle);
  EXPECT_EQ(good.overall.circular_accuracy(), 1.0);
  EXPECT_EQ(good.overall.plain_accuracy(), 1.0);
  FullTextAdapter verbose(items);
  const auto bad = circular_evaluate(items, verbose);
  EXPECT_EQ(bad.overall.circular_accuracy(), 0.0);
  EXPECT_EQ(bad.overall.plain_accuracy(), 0.0);
}

TEST(Circular, UniformRandomGuessMatchesMonteCarloRates) {
  const auto items = balanced(10000);
  RandomGuessAdapter random(7);
  const auto report = circular_evaluate(items, random);
  EXPECT_NEAR(report.overall.circular_accuracy(), 1.0 / 256.0, 0.002);
  EXPECT_NEAR(report.overall.plain_accuracy(), 0.25, 0.01);
}

TEST(Circular, NeverExceedsPlainForRandomizedAdapters) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<MCQItem> items;
    const int count = std::uniform_int_distribution<int>(1, 60)(rng);
    for (int i = 0; i < count; ++i) {
      const auto n = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
      items.push_back(item("t" + std::to_string(i), n, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
    }
    std::vector<double> w(6);
    for (auto& x : w) x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    BiasedAdapter adapter(trial, w);
    const auto r = circular_evaluate(items, adapter);
    EXPECT_LE(r.overall.circular_correct, r.overall.plain_correct);
    for (const auto& s : r.per_dimension) EXPECT_LE(s.circular_correct, s.plain_correct);
  }
}

TEST(Circular, AdapterFailureMarksItemWrongAndContinues) {
  auto items = balanced(4);
  items[2].question = "please fail here";
  FailingAdapter a;
  const auto r = circular_evaluate(items, a);
  EXPECT_EQ(r.items.size(), 4u);
  EXPECT_EQ(r.adapter_failures, 4u);
  const auto& failed = r.items[2];
  EXPECT_FALSE(failed.circular_correct);
  EXPECT_FALSE(failed.plain_correct);
  for (const auto& rot : failed.rotations) EXPECT_EQ(rot.error, "backend unavailable");
}

TEST(Circular, EveryItemRecordsOneRotationPerOptionSortedById) {
  std::vector<MCQItem> items{item("c", 3, 1), item("a", 5, 4), item("b", 2, 0)};
  OracleAdapter a(items);
  const auto r = circular_evaluate(items, a, {.threads = 3});
  ASSERT_EQ(r.items.size(), 3u);
  EXPECT_EQ(r.items[0].id, "a");
  EXPECT_EQ(r.items[1].id, "b");
  EXPECT_EQ(r.items[2].id, "c");
  EXPECT_EQ(r.items[0].rotations.size(), 5u);
  EXPECT_EQ(r.items[1].rotations.size(), 2u);
  EXPECT_EQ(r.option_counts.at(2), 1u);
  EXPECT_EQ(r.option_counts.at(5), 1u);
}

TEST(Circular, ThreadCountDoesNotChangeTheReport) {
  const auto items = balanced(200);
  RandomGuessAdapter a(11), b(11);
  EXPECT_EQ(circular_evaluate(items, a, {.threads = 1}).to_json(),
            circular_evaluate(items, b, {.threads = 4}).to_json());
}

TEST(Circular, SamePromptIsAskedOnce) {
  auto items = balanced(8);
  for (auto& it : items) {
    it.question = "Same?";
    it.options = {"w", "x", "y", "z"};
    it.answer_index = 0;
  }
  for (std::size_t i = 0; i < items.size(); ++i) items[i].id = "s" + std::to_string(i);
  CountingAdapter counting;
  const auto r = circular_evaluate(items, counting);
  EXPECT_EQ(counting.calls.load(), 4);
  EXPECT_EQ(r.overall.total, 8u);
}

TEST(Memo, CachesPerPromptButNotFailures) {
  CountingAdapter inner;
  MemoizingAdapter memo(inner);
  EXPECT_EQ(memo.answer("p"), "A");
  EXPECT_EQ(memo.answer("p"), "A");
  EXPECT_EQ(memo.answer("q"), "A");
  EXPECT_EQ(inner.calls.load(), 2);
  EXPECT_EQ(memo.cache_size(), 2u);
  FailingAdapter failing;
  MemoizingAdapter memo2(failing);
  EXPECT_THROW(memo2.answer("fail"), AdapterError);
  EXPECT_EQ(memo2.cache_size(), 0u);
}

TEST(Report, PerDimensionAggregatesAndTableOrder) {
  std::vector<MCQItem> items{item("1", 4, 0, Dimension::Color), item("2", 4, 1, Dimension::Color),
                             item("3", 4, 0, Dimension::Reasoning)};
  ConstantAdapter a("A.");
  const auto r = circular_evaluate(items, a);
  const auto& color = r.per_dimension[static_cast<std::size_t>(Dimension::Color)];
  EXPECT_EQ(color.total, 2u);
  EXPECT_EQ(color.plain_correct, 1u);
  EXPECT_EQ(r.overall.total, 3u);
  EXPECT_DOUBLE_EQ(r.bias_gap(), 2.0 / 3.0);
  const auto table = r.render_table();
  std::size_t last = 0;
  for (auto name : kDimensionNames) {
    const auto pos = table.find(std::string(name));
    ASSERT_NE(pos, std::string::npos) << name;
    EXPECT_GT(pos, last);
    last = pos;
  }
  EXPECT_GT(table.find("OA"), last);
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j["overall"]["plain_accuracy"].get<double>(), 2.0 / 3.0);
  EXPECT_EQ(j["items"].size(), 3u);
}

TEST(Loader, ReadsFixtureAndRoundTripsJson) {
  const auto items = load_mcq_items(kFixtures + "items.jsonl");
  ASSERT_EQ(items.size(), 12u);
  for (const auto& it : items) EXPECT_EQ(mcq_item_from_json(mcq_item_to_json(it)), it);
  EXPECT_EQ(items[5].options.size(), 6u);
  EXPECT_EQ(items[10].dimension, Dimension::Reasoning);
}

TEST(Loader, ErrorsNameFileAndLine) {
  try {
    load_mcq_items(kFixtures + "malformed.jsonl");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("malformed.jsonl:3"), std::string::npos);
  }
  try {
    load_mcq_items(kFixtures + "bad_json.jsonl");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(e.line(), 3u) << e.what();
  }
  EXPECT_THROW(load_mcq_items(kFixtures + "missing.jsonl"), InputError);
}

TEST(Subprocess, PromptOnStdinAnswerOnStdout) {
  SubprocessAdapter echo_last("tail -n 1 | cut -c1");
  EXPECT_EQ(echo_last.answer("line one\nZ marks the spot"), "Z");
  SubprocessAdapter crlf("printf 'B.\\r\\nextra\\n'");
  EXPECT_EQ(crlf.answer("anything"), "B.");
  SubprocessAdapter failing("exit 3");
  EXPECT_THROW(failing.answer("x"), AdapterError);
}

TEST(Subprocess, LargePromptDoesNotDeadlock) {
  SubprocessAdapter wc("wc -c | tr -d ' '");
  const std::string prompt(1 << 20, 'x');
  EXPECT_EQ(wc.answer(prompt), std::to_string((1 << 20) + 1));
}

TEST(Subprocess, ScoresThroughCircularEvaluation) {
  const auto items = balanced(4);
  SubprocessAdapter a("echo A");
  const auto r = circular_evaluate(items, a, {.threads = 2});
  EXPECT_EQ(r.overall.plain_accuracy(), 0.25);
  EXPECT_EQ(r.adapter_failures, 0u);
}

TEST(OneShot, PrependsExemplarOnly) {
  class Recorder final : public ModelAdapter {
   public:
    std::string answer(const std::string& p) override {
      last = p;
      return "A";
    }
    std::string name() const override { return "rec"; }
    std::string last;
  } rec;
  OneShotAdapter one(rec);
  one.answer("QUESTION");
  EXPECT_EQ(rec.last.rfind(OneShotAdapter::exemplar(), 0), 0u);
  EXPECT_EQ(rec.last.substr(rec.last.size() - 8), "QUESTION");
  EXPECT_EQ(one.name(), "rec+one-shot");
}
