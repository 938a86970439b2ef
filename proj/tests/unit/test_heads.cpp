#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lfusion/heads/heads.hpp"

namespace lfusion {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Bin lookup by scanning the eight half-open degree intervals.
std::pair<int, double> yaw_oracle_deg(double deg) {
  while (deg >= 337.5) deg -= 360.0;
  while (deg < -22.5) deg += 360.0;
  for (int i = 0; i < 8; ++i) {
    const double c = 45.0 * i;
    if (deg >= c - 22.5 && deg < c + 22.5) return {i, deg - c};
  }
  return {-1, 0.0};
}

TEST(Yaw, Examples) {
  auto z = encode_yaw(0.0);
  EXPECT_EQ(z.bin, 0);
  EXPECT_DOUBLE_EQ(z.offset, 0.0);
  auto a = encode_yaw(30 * kDeg);
  EXPECT_EQ(a.bin, 1);
  EXPECT_NEAR(a.offset, -15 * kDeg, 1e-12);
  auto b = encode_yaw(350 * kDeg);
  EXPECT_EQ(b.bin, 0);
  EXPECT_NEAR(b.offset, -10 * kDeg, 1e-12);
  EXPECT_DOUBLE_EQ(decode_yaw(0, 0.0), 0.0);
  EXPECT_NEAR(decode_yaw(1, -15 * kDeg), 30 * kDeg, 1e-12);
}

TEST(Yaw, BinCentersAreMultiplesOf45Degrees) {
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(yaw_bin_center(i) / kDeg, 45.0 * i, 1e-12);
}

TEST(Yaw, MatchesIntervalOracle) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(-720.0, 720.0);
  for (int i = 0; i < 10000; ++i) {
    const double deg = d(rng);
    auto [bin, off] = yaw_oracle_deg(deg);
    auto c = encode_yaw(deg * kDeg);
    ASSERT_EQ(c.bin, bin) << deg;
    ASSERT_NEAR(c.offset / kDeg, off, 1e-9) << deg;
  }
}

TEST(Yaw, BoundariesBelongToUpperBin) {
  for (int i = 0; i < 8; ++i) {
    auto c = encode_yaw((45.0 * i - 22.5) * kDeg);
    EXPECT_EQ(c.bin, i);
    EXPECT_GE(c.offset, -std::numbers::pi / 8);
    EXPECT_LT(c.offset, std::numbers::pi / 8);
  }
}

TEST(Yaw, RoundTripsAndOffsetRange) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(0.0, 2 * std::numbers::pi);
  for (int i = 0; i < 10000; ++i) {
    const double th = d(rng);
    auto c = encode_yaw(th);
    ASSERT_GE(c.offset, -std::numbers::pi / 8);
    ASSERT_LT(c.offset, std::numbers::pi / 8);
    ASSERT_LT(angle_distance(decode_yaw(c), th), 1e-9);
  }
  std::uniform_real_distribution<double> off(-std::numbers::pi / 8, std::numbers::pi / 8);
  for (int i = 0; i < 1000; ++i) {
    const int bin = i % 8;
    const double o = off(rng);
    auto c = encode_yaw(decode_yaw(bin, o));
    ASSERT_EQ(c.bin, bin);
    ASSERT_NEAR(c.offset, o, 1e-9);
  }
}

TEST(Yaw, DecodeRejectsBadClass) {
  EXPECT_THROW(decode_yaw(8, 0.0), std::out_of_range);
  EXPECT_THROW(decode_yaw(-1, 0.0), std::out_of_range);
}

TEST(Geometry, BevGridMapsCellCentres) {
  auto g = bev_grid(32, 32, 1.6);
  auto c = g.locate(0.8, 25.6 - 0.8);
  EXPECT_EQ(c.row, 0);
  EXPECT_EQ(c.col, 0);
  EXPECT_NEAR(c.dx, 0.5, 1e-12);
  EXPECT_NEAR(c.dy, 0.5, 1e-12);
  EXPECT_NEAR(g.a_at(c.col + c.dx), 0.8, 1e-12);
  EXPECT_NEAR(g.b_at(c.row + c.dy), 24.8, 1e-12);
  EXPECT_FALSE(g.contains(g.locate(52.0, 0.0)));
  EXPECT_FALSE(g.contains(g.locate(10.0, 26.0)));
}

TEST(Head, BevShapes) {
  ParamSet<float> ps(1);
  DetectionHead<float> head(ps, "bev_head", HeadKind::kBev, 6, 4, 2, 8, 8);
  auto x = Tensor::full({1, 8, 8, 6}, 0.0f);
  auto o = head(x);
  EXPECT_EQ(o.heatmap.shape(), (Shape{1, 8, 8, 2}));
  EXPECT_EQ(o.box.shape(), (Shape{1, 8, 8, 4}));
  EXPECT_EQ(o.yaw_class.shape(), (Shape{1, 8, 8, 8}));
  EXPECT_EQ(o.yaw_offset.shape(), (Shape{1, 8, 8, 1}));
}

TEST(Head, DefaultBevShapes) {
  ParamSet<float> ps(2);
  DetectionHead<float> head(ps, "bev_head", HeadKind::kBev, 32, 16, 2, 32, 32);
  auto o = head(Tensor::full({1, 32, 32, 32}, 0.1f));
  EXPECT_EQ(o.heatmap.shape(), (Shape{1, 32, 32, 2}));
  EXPECT_EQ(o.box.shape(), (Shape{1, 32, 32, 4}));
  EXPECT_EQ(o.yaw_class.shape(), (Shape{1, 32, 32, 8}));
  EXPECT_EQ(o.yaw_offset.shape(), (Shape{1, 32, 32, 1}));
}

TEST(Head, TwoDHasNoYaw) {
  ParamSet<float> ps(1);
  DetectionHead<float> head(ps, "img_head", HeadKind::k2d, 6, 4, 2, 4, 12);
  auto o = head(Tensor::full({1, 4, 12, 6}, 1.0f));
  EXPECT_FALSE(o.yaw_class.defined());
  EXPECT_FALSE(o.yaw_offset.defined());
  for (const auto& [name, t] : ps.named()) EXPECT_EQ(name.find("yaw"), std::string::npos) << name;
}

TEST(Head, InitialHeatmapNearPrior) {
  ParamSet<float> ps(3);
  DetectionHead<float> head(ps, "bev_head", HeadKind::kBev, 6, 4, 2, 8, 8);
  // Zero features isolate the bias path.
  auto o = head(Tensor::zeros({1, 8, 8, 6}));
  for (float v : o.heatmap.data()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(2.19)), 1e-6);
  EXPECT_NEAR(1.0 / (1.0 + std::exp(2.19)), 0.1, 2e-3);
}

TEST(Head, RejectsMismatchedFeatures) {
  ParamSet<float> ps(1);
  DetectionHead<float> head(ps, "bev_head", HeadKind::kBev, 6, 4, 2, 32, 32);
  EXPECT_THROW(head(Tensor::zeros({1, 16, 48, 6})), ShapeError);
  EXPECT_THROW(head(Tensor::zeros({1, 32, 32, 5})), ShapeError);
}

HeadOutput<float> synthetic_output(std::size_t H, std::size_t W, std::size_t K, std::vector<float> heat, bool bev) {
  HeadOutput<float> o;
  o.heatmap = Tensor::from({1, H, W, K}, std::move(heat));
  std::vector<float> box(H * W * 4);
  for (std::size_t i = 0; i < H * W; ++i) {
    box[i * 4 + 0] = 0.25f;
    box[i * 4 + 1] = 0.75f;
    box[i * 4 + 2] = std::log(4.0f);
    box[i * 4 + 3] = std::log(2.0f);
  }
  o.box = Tensor::from({1, H, W, 4}, std::move(box));
  if (bev) {
    std::vector<float> yc(H * W * 8, 0.0f);
    for (std::size_t i = 0; i < H * W; ++i) yc[i * 8 + 2] = 3.0f;
    o.yaw_class = Tensor::from({1, H, W, 8}, std::move(yc));
    o.yaw_offset = Tensor::full({1, H, W, 1}, 0.1f);
  }
  return o;
}

TEST(Decode, SinglePeak) {
  std::vector<float> heat(5 * 5, 0.0f);
  heat[2 * 5 + 3] = 0.9f;
  auto o = synthetic_output(5, 5, 1, heat, true);
  auto g = bev_grid(5, 5, 2.0);
  auto dets = decode_detections(o, 0, g, {0.5, 64});
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].row, 2);
  EXPECT_EQ(dets[0].col, 3);
  EXPECT_NEAR(dets[0].score, 0.9, 1e-6);
  EXPECT_NEAR(dets[0].a, (3 + 0.25) * 2.0, 1e-5);
  EXPECT_NEAR(dets[0].b, 5.0 - (2 + 0.75) * 2.0, 1e-5);
  EXPECT_NEAR(dets[0].size0, 4.0, 1e-5);
  EXPECT_NEAR(dets[0].size1, 2.0, 1e-5);
  ASSERT_TRUE(dets[0].yaw.has_value());
  EXPECT_NEAR(*dets[0].yaw, std::numbers::pi / 2 + 0.1, 1e-6);
}

TEST(Decode, AdjacentCellsSuppressed) {
  std::vector<float> heat(5 * 5, 0.0f);
  heat[2 * 5 + 1] = 0.9f;
  heat[2 * 5 + 2] = 0.8f;
  auto dets = decode_detections(synthetic_output(5, 5, 1, heat, false), 0, image_grid(5, 5, 2.0), {0.5, 64});
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].col, 1);
  EXPECT_FALSE(dets[0].yaw.has_value());
}

TEST(Decode, BelowThresholdIsEmpty) {
  std::vector<float> heat(4 * 4, 0.2f);
  auto dets = decode_detections(synthetic_output(4, 4, 1, heat, false), 0, image_grid(4, 4, 1.0), {0.3, 64});
  EXPECT_TRUE(dets.empty());
}

TEST(Decode, RejectsBadOptions) {
  auto o = synthetic_output(2, 2, 1, std::vector<float>(4, 0.5f), false);
  EXPECT_THROW(decode_detections(o, 0, image_grid(2, 2, 1.0), {0.0, 4}), std::invalid_argument);
  EXPECT_THROW(decode_detections(o, 0, image_grid(2, 2, 1.0), {0.5, 0}), std::invalid_argument);
}

// Brute-force peak set: strict 3x3 maxima, plus first-in-raster-order
// winners among equal neighbours.
TEST(Decode, RandomMapsMatchNeighbourhoodOracle) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> level(0, 9);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t H = 6, W = 7, K = 2;
    std::vector<float> heat(H * W * K);
    // Coarse levels force plenty of ties.
    for (auto& v : heat) v = 0.1f * static_cast<float>(level(rng));
    auto o = synthetic_output(H, W, K, heat, true);
    const std::size_t top_k = trial % 3 == 0 ? 3 : 64;
    auto dets = decode_detections(o, 0, bev_grid(H, W, 1.0), {0.35, top_k});

    std::vector<std::tuple<float, long, long, int>> expect;
    for (long r = 0; r < (long)H; ++r)
      for (long c = 0; c < (long)W; ++c)
        for (int k = 0; k < (int)K; ++k) {
          const float v = heat[(r * W + c) * K + k];
          if (v <= 0.35f) continue;
          bool ok = true;
          for (long rr = std::max(0L, r - 1); rr <= std::min((long)H - 1, r + 1); ++rr)
            for (long cc = std::max(0L, c - 1); cc <= std::min((long)W - 1, c + 1); ++cc) {
              if (rr == r && cc == c) continue;
              const float n = heat[(rr * W + cc) * K + k];
              if (n > v || (n == v && (rr * W + cc) < (r * W + c))) ok = false;
            }
          if (ok) expect.emplace_back(v, r, c, k);
        }
    EXPECT_LE(dets.size(), top_k);
    EXPECT_EQ(dets.size(), std::min(expect.size(), top_k));
    for (const auto& d : dets) {
      EXPECT_GT(d.score, 0.35);
      bool found = false;
      for (auto& [v, r, c, k] : expect) found |= (r == d.row && c == d.col && k == d.category);
      EXPECT_TRUE(found);
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (i) EXPECT_GE(dets[i - 1].score, dets[i].score);
      for (std::size_t j = i + 1; j < dets.size(); ++j) {
        if (dets[i].category != dets[j].category) continue;
        EXPECT_FALSE(std::abs(dets[i].row - dets[j].row) <= 1 && std::abs(dets[i].col - dets[j].col) <= 1);
      }
    }
  }
}

TEST(Decode, InvariantToYawLogitShift) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> heat(6 * 6 * 2);
  for (auto& v : heat) v = u(rng);
  auto o = synthetic_output(6, 6, 2, heat, true);
  std::vector<float> yc(6 * 6 * 8);
  for (auto& v : yc) v = u(rng) * 4 - 2;
  o.yaw_class = Tensor::from({1, 6, 6, 8}, yc);
  auto g = bev_grid(6, 6, 1.0);
  auto base = decode_detections(o, 0, g);
  for (auto& v : yc) v += 7.5f;
  o.yaw_class = Tensor::from({1, 6, 6, 8}, yc);
  auto shifted = decode_detections(o, 0, g);
  ASSERT_EQ(base.size(), shifted.size());
  ASSERT_FALSE(base.empty());
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(*base[i].yaw, *shifted[i].yaw);
}

}  // namespace
}  // namespace lfusion
