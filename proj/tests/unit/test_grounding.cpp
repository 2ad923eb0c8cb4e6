#include <gtest/gtest.h>

#include "mvp/errors.hpp"
#include "mvp/eval/grounding.hpp"
#include "mvp/tensor/random.hpp"
#include "oracle.hpp"

using namespace mvp;

namespace {

const std::string kFixtures = std::string(MVP_FIXTURE_DIR) + "/grounding/";

double raster(const BBox& a, const BBox& b) {
  const double pa[4] = {a.x1, a.y1, a.x2, a.y2}, pb[4] = {b.x1, b.y1, b.x2, b.y2};
  return oracle::raster_iou(pa, pb);
}

BBox random_box(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x1 = u(rng), x2 = u(rng), y1 = u(rng), y2 = u(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {x1, y1, x2, y2};
}

}  // namespace

TEST(ParseBBox, TableExampleParsesExactly) {
  const auto p = parse_bbox("<bbox>[0.399,0.163,0.452,0.293]</bbox>");
  EXPECT_EQ(p.box, (BBox{0.399, 0.163, 0.452, 0.293}));
  EXPECT_FALSE(p.clamped);
}

TEST(ParseBBox, NoSpanIsParseError) {
  EXPECT_THROW(parse_bbox("no box here"), ParseError);
  EXPECT_THROW(parse_bbox("<bbox>[0.1,0.2,0.3]</bbox>"), ParseError);
  EXPECT_THROW(parse_bbox("<bbox>(0.1,0.2,0.3,0.4)</bbox>"), ParseError);
}

TEST(ParseBBox, FirstSpanWins) {
  EXPECT_EQ(parse_bbox("x <bbox>[0,0,1,1]</bbox> y <bbox>[0.5,0.5,0.6,0.6]</bbox>").box, (BBox{0, 0, 1, 1}));
}

TEST(ParseBBox, OutOfRangeIsClampedAndFlagged) {
  const auto p = parse_bbox("<bbox>[-0.2, 0.1, 1.5, 0.9]</bbox>");
  EXPECT_EQ(p.box, (BBox{0.0, 0.1, 1.0, 0.9}));
  EXPECT_TRUE(p.clamped);
  const auto swapped = parse_bbox("<bbox>[0.6,0.1,0.2,0.9]</bbox>");
  EXPECT_EQ(swapped.box, (BBox{0.2, 0.1, 0.6, 0.9}));
  EXPECT_TRUE(swapped.clamped);
}

TEST(ParseBBox, FormatRoundTripIsIdentity) {
  EXPECT_EQ(format_bbox({0.399, 0.163, 0.452, 0.293}), "<bbox>[0.399,0.163,0.452,0.293]</bbox>");
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto box = random_box(rng);
    EXPECT_EQ(parse_bbox(format_bbox(box)).box, box);
  }
  EXPECT_EQ(parse_bbox(format_bbox({0, 0, 1, 1})).box, (BBox{0, 0, 1, 1}));
}

TEST(Iou, HandBuiltSuiteAgainstRasterization) {
  const BBox a{0, 0, 0.5, 0.5}, b{0.25, 0.25, 0.75, 0.75}, far{0.6, 0.6, 0.9, 0.9};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, far), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-9);
  EXPECT_NEAR(raster(a, b), 1.0 / 7.0, 1e-9);
  EXPECT_NEAR(iou(a, b), raster(a, b), 1e-9);
  EXPECT_EQ(iou(BBox{0.2, 0.2, 0.2, 0.2}, BBox{0.2, 0.2, 0.2, 0.2}), 0.0);
}

TEST(Iou, SymmetricAndAgreesWithRasterOnRandomBoxes) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    EXPECT_EQ(iou(a, b), iou(b, a));
    if (a.area() > 0) EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_NEAR(iou(a, b), raster(a, b), 5e-3);
  }
}

TEST(Accuracy, StrictThresholdExcludesExactHalf) {
  const BBox gt{0, 0, 1, 1};
  ASSERT_EQ(iou(gt, BBox{0, 0, 0.5, 1}), 0.5);
  EXPECT_EQ(grounding_accuracy({"<bbox>[0,0,0.5,1]</bbox>"}, {gt}), 0.0);
  EXPECT_EQ(grounding_accuracy({"<bbox>[0,0,0.5000001,1]</bbox>"}, {gt}), 1.0);
}

TEST(Accuracy, IdenticalPredictionsScoreOne) {
  Rng rng(3);
  std::vector<BBox> gts;
  std::vector<std::string> preds;
  for (int i = 0; i < 50; ++i) {
    auto b = random_box(rng);
    b.x2 = std::min(1.0, b.x1 + 0.1);
    b.y2 = std::min(1.0, b.y1 + 0.1);
    gts.push_back(b);
    preds.push_back(format_bbox(b));
  }
  EXPECT_EQ(grounding_accuracy(preds, gts), 1.0);
  EXPECT_THROW(grounding_accuracy({"x"}, {}), ContractError);
}

TEST(Accuracy, MixedFixtureBatchIsHalf) {
  const auto items = load_grounding_items(kFixtures + "items.jsonl");
  ASSERT_EQ(items.size(), 4u);
  std::vector<std::string> preds;
  std::vector<BBox> gts;
  std::size_t expect_correct = 0;
  for (const auto& it : items) {
    preds.push_back(it.pred_text);
    gts.push_back(it.gt_box);
    try {
      expect_correct += raster(parse_bbox(it.pred_text).box, it.gt_box) > 0.5;
    } catch (const ParseError&) {
    }
  }
  EXPECT_EQ(expect_correct, 2u);
  EXPECT_EQ(grounding_accuracy(preds, gts), 0.5);
  const auto report = evaluate_grounding(items);
  EXPECT_EQ(report.accuracy(), 0.5);
  EXPECT_EQ(report.parse_failures, 1u);
  EXPECT_FALSE(report.items[3].pred.has_value());
  EXPECT_NEAR(report.items[1].iou, 1.0 / 7.0, 1e-9);
  EXPECT_EQ(report.to_json()["correct"], 2);
}

TEST(Loader, InvalidGroundTruthNamesLine) {
  try {
    load_grounding_items(kFixtures + "malformed.jsonl");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}
