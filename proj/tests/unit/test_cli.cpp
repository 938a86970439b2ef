#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "lfusion/cli/ablation.hpp"
#include "lfusion/cli/cost.hpp"
#include "lfusion/cli/viz.hpp"
#include "../support/tiny_config.hpp"

namespace fs = std::filesystem;

namespace lfusion {
namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lfusion_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

using testing::tiny_config;

// Config ---------------------------------------------------------------------

TEST(RunConfig, DefaultRoundTrip) {
  RunConfig c;
  EXPECT_EQ(parse_config(to_text(c)), c);
}

TEST(RunConfig, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    RunConfig c;
    c.loss.w_fg = u(rng);
    c.loss.w_heat = 100 * u(rng);
    c.lr = std::pow(10.0, -6 * u(rng));
    c.weight_decay = u(rng) * 1e-3;
    c.max_rot = 180 * u(rng);
    c.max_trans = 1e3 * u(rng);
    c.mirror = u(rng) < 0.5;
    c.vehicle_fraction = u(rng);
    c.seed = rng();
    c.data_seed = rng();
    c.fusion_stages.clear();
    for (int s = 1; s <= 4; ++s)
      if (u(rng) < 0.5) c.fusion_stages.insert(s);
    c.modality = trial % 3 == 0 ? Modality::kLidarOnly : Modality::kFusion;
    c.stage_channels[2] = 1 + rng() % 100;
    c.out_dir = "runs/x" + std::to_string(trial);
    const auto back = parse_config(to_text(c));
    ASSERT_EQ(back, c) << to_text(c);
    EXPECT_EQ(to_text(back), to_text(c));
  }
}

TEST(RunConfig, ParsesCommentsAndDottedKeys) {
  const auto c = parse_config("# weights\n  loss.w_heat = 10   # heat\n\nmodel.fusion_stages = 2, 3,4\naugment.mirror = false\n");
  EXPECT_EQ(c.loss.w_heat, 10.0);
  EXPECT_EQ(c.fusion_stages, (std::set<int>{2, 3, 4}));
  EXPECT_FALSE(c.mirror);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(parse_config("loss.w_nope = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("loss.w_heat 10\n"), ConfigError);
  EXPECT_THROW(parse_config("loss.w_heat = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("augment.mirror = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("model.stage_channels = 1,2,3\n"), ConfigError);
  EXPECT_THROW(parse_config("model.modality = radar\n"), ConfigError);
}

TEST(RunConfig, DefaultsFollowTrainingRecipe) {
  RunConfig c;
  EXPECT_EQ(c.lr, 1e-4);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.lr_decay, 0.99996);
  EXPECT_EQ(c.loss, LossWeights{});
  EXPECT_TRUE(c.mirror);
  EXPECT_EQ(c.max_rot, 0.0);
  EXPECT_EQ(c.max_trans, 0.0);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.steps, 5000u);
  EXPECT_NO_THROW(c.validate());
}

// Checkpoint -----------------------------------------------------------------

TEST(Checkpoint, SingleTensorHeaderBytes) {
  Checkpoint c;
  c.params.push_back({"w", {2, 2}, {1, 2, 3, 4}});
  const auto bytes = serialize_checkpoint(c);
  const std::vector<unsigned char> head(bytes.begin(), bytes.begin() + 12 + 2 + 1 + 1 + 8);
  const std::vector<unsigned char> want{'L', 'F', 'C', 'K', 1, 0, 0, 0, 3, 0, 0, 0,  // magic, version, 3 tensors
                                        1,   0,   'w', 2,  2, 0, 0, 0, 2, 0, 0, 0};
  EXPECT_EQ(head, want);
  std::uint32_t first = 0;
  for (int i = 0; i < 4; ++i) first |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[24 + i])) << (8 * i);
  EXPECT_EQ(std::bit_cast<float>(first), 1.0f);
  // 16 payload bytes, then the reserved __step tensor begins.
  EXPECT_EQ(bytes[24 + 16], 6);
  EXPECT_EQ(std::string(bytes.begin() + 42, bytes.begin() + 48), "__step");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937 rng(4);
  std::uniform_int_distribution<std::uint32_t> bits;
  Checkpoint c;
  c.config_text = to_text(RunConfig{});
  for (int t = 0; t < 5; ++t) {
    NamedTensor nt{"layer" + std::to_string(t) + ".weight", {static_cast<std::size_t>(t + 1), 3}, {}};
    for (std::size_t i = 0; i < shape_numel(nt.shape); ++i) {
      float f = std::bit_cast<float>(bits(rng));
      if (std::isnan(f)) f = -0.0f;
      nt.data.push_back(f);
    }
    c.m.emplace_back(nt.data.size(), 0.25f);
    c.v.emplace_back(nt.data.size(), std::numeric_limits<float>::denorm_min());
    c.params.push_back(std::move(nt));
  }
  c.step = 123456789;
  const auto dir = scratch("ckpt_roundtrip");
  save_checkpoint(c, (dir / "a.lfck").string());
  const auto back = load_checkpoint((dir / "a.lfck").string());
  EXPECT_EQ(back, c);
  for (std::size_t p = 0; p < c.params.size(); ++p)
    for (std::size_t i = 0; i < c.params[p].data.size(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(back.params[p].data[i]), std::bit_cast<std::uint32_t>(c.params[p].data[i]));
  save_checkpoint(back, (dir / "b.lfck").string());
  EXPECT_EQ(slurp(dir / "a.lfck"), slurp(dir / "b.lfck"));
}

TEST(Checkpoint, DistinctErrorKinds) {
  Checkpoint c;
  c.params.push_back({"w", {2, 2}, {1, 2, 3, 4}});
  auto bytes = serialize_checkpoint(c);

  auto bad_magic = bytes;
  std::copy_n("XXXX", 4, bad_magic.begin());
  EXPECT_THROW(deserialize_checkpoint(bad_magic), BadMagicError);

  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(deserialize_checkpoint(bad_version), UnsupportedVersionError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{30}, bytes.size() - 1}) {
    auto trunc = std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(trunc), TruncatedError) << cut;
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/x.lfck"), CheckpointError);
}

TEST(Checkpoint, RestoreRejectsOtherArchitecture) {
  auto a = tiny_config();
  auto b = a;
  b.d_model = 16;
  Detector da(a), db(b);
  const auto ck = make_checkpoint(da.params(), nullptr, to_text(a));
  EXPECT_THROW(restore_checkpoint(ck, db.params()), CheckpointMismatchError);
  try {
    load_detector(ck, b);
    FAIL() << "expected mismatch";
  } catch (const CheckpointMismatchError& e) {
    const std::string msg = e.what();
    char sa[17], sb[17];
    std::snprintf(sa, sizeof sa, "%016llx", static_cast<unsigned long long>(architecture_stamp(a)));
    std::snprintf(sb, sizeof sb, "%016llx", static_cast<unsigned long long>(architecture_stamp(b)));
    EXPECT_NE(msg.find(sa), std::string::npos) << msg;
    EXPECT_NE(msg.find(sb), std::string::npos) << msg;
    EXPECT_NE(msg.find("model.d_model"), std::string::npos) << msg;
  }
}

// Training -------------------------------------------------------------------

TEST(Train, IdenticalSeedsGiveIdenticalBytes) {
  auto c = tiny_config();
  // The config snapshot records out_dir, so both runs share one directory.
  c.out_dir = scratch("det_a").string();
  run_train(c);
  const auto ckpt = slurp(fs::path(c.out_dir) / "final.lfck");
  const auto metrics = slurp(fs::path(c.out_dir) / "metrics.jsonl");
  run_train(c);
  EXPECT_EQ(ckpt, slurp(fs::path(c.out_dir) / "final.lfck"));
  EXPECT_EQ(metrics, slurp(fs::path(c.out_dir) / "metrics.jsonl"));
  auto e = c;
  e.seed = 1;
  e.out_dir = scratch("det_c").string();
  run_train(e);
  EXPECT_NE(slurp(fs::path(c.out_dir) / "final.lfck"), slurp(fs::path(e.out_dir) / "final.lfck"));
}

TEST(Train, DefaultConfigSmokeLossDecreases) {
  RunConfig c;
  c.steps = 200;
  c.eval_interval = 0;
  c.eval_frames = 8;
  const auto res = run_train(c, {.write_files = false});
  ASSERT_EQ(res.losses.size(), 200u);
  const double first = std::accumulate(res.losses.begin(), res.losses.begin() + 10, 0.0) / 10;
  const double last = std::accumulate(res.losses.end() - 10, res.losses.end(), 0.0) / 10;
  EXPECT_LT(last, first);
}

TEST(Train, CheckpointCarriesOptimizerStateAndStep) {
  auto c = tiny_config();
  c.out_dir = scratch("opt_state").string();
  const auto res = run_train(c);
  const auto back = load_checkpoint((fs::path(c.out_dir) / "final.lfck").string());
  EXPECT_EQ(back.step, c.steps);
  EXPECT_EQ(back.m.size(), back.params.size());
  EXPECT_EQ(parse_config(back.config_text), c);
  EXPECT_EQ(back, res.checkpoint);
}

TEST(Train, LidarOnlyHasNoCameraParametersOrImageMetrics) {
  auto c = tiny_config();
  c.modality = Modality::kLidarOnly;
  c.fusion_stages.clear();
  c.out_dir = scratch("lidar").string();
  const auto res = run_train(c);
  for (const auto& p : res.checkpoint.params) {
    EXPECT_FALSE(p.name.starts_with("camera")) << p.name;
    EXPECT_FALSE(p.name.starts_with("head_2d")) << p.name;
    EXPECT_FALSE(p.name.starts_with("fusion")) << p.name;
  }
  EXPECT_FALSE(res.final_metrics.map_2d.has_value());
  std::ifstream f(fs::path(c.out_dir) / "metrics.jsonl");
  std::string line;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_NE(j.value("head", ""), "2d");
    if (j.contains("bev_map")) EXPECT_TRUE(j["map_2d"].is_null());
  }
}

TEST(Train, MetricsLinesParseWithDeclaredKeys) {
  auto c = tiny_config();
  c.out_dir = scratch("keys").string();
  run_train(c);
  std::ifstream f(fs::path(c.out_dir) / "metrics.jsonl");
  std::string line;
  std::size_t train_lines = 0, ap_lines = 0, summaries = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    ASSERT_TRUE(j.contains("split"));
    if (j["split"] == "train") {
      ++train_lines;
      for (auto k : {"step", "loss", "lr", "loss_bev", "heat_bev", "bbox_bev", "yaw_cls", "yaw_offset", "loss_2d"})
        EXPECT_TRUE(j.contains(k)) << k;
    } else if (j.contains("ap")) {
      ++ap_lines;
      for (auto k : {"category", "threshold", "head"}) EXPECT_TRUE(j.contains(k)) << k;
    } else {
      ++summaries;
      for (auto k : {"bev_map", "map_2d", "mean_yaw_err", "focus_ratio_mean", "step"}) EXPECT_TRUE(j.contains(k)) << k;
    }
  }
  EXPECT_EQ(train_lines, c.steps);
  EXPECT_EQ(ap_lines, 2u * 4u + 2u);
  EXPECT_EQ(summaries, 1u);
}

TEST(Train, NonFiniteLossAbortsWithStepAndComponents) {
  auto c = tiny_config();
  c.lr = 1e30;
  c.steps = 20;
  TrainOptions opt;
  opt.write_files = false;
  try {
    run_train(c, opt);
    FAIL() << "expected abort";
  } catch (const NonFiniteLossError& e) {
    EXPECT_GE(e.step(), 2u);
    EXPECT_TRUE(e.components().contains("loss_bev"));
    EXPECT_NE(std::string(e.what()).find("step " + std::to_string(e.step())), std::string::npos);
  }
}

TEST(Eval, IdentityPerturbationEqualsPlainAndIsDeterministic) {
  auto c = tiny_config();
  TrainOptions opt;
  opt.write_files = false;
  const auto res = run_train(c, opt);
  EvalOptions plain;
  auto zero = plain;
  zero.max_rot = 0.0;
  zero.max_trans = 0.0;
  zero.seed = 99;
  std::stringstream a, b, d;
  write_metrics_jsonl(a, run_eval(res.checkpoint, c, plain), "val", category_names());
  write_metrics_jsonl(b, run_eval(res.checkpoint, c, zero), "val", category_names());
  write_metrics_jsonl(d, run_eval(res.checkpoint, c, plain), "val", category_names());
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str(), d.str());
  auto moved = plain;
  moved.max_rot = 15;
  moved.max_trans = 0.5;
  std::stringstream m1, m2;
  write_metrics_jsonl(m1, run_eval(res.checkpoint, c, moved), "val", category_names());
  write_metrics_jsonl(m2, run_eval(res.checkpoint, c, moved), "val", category_names());
  EXPECT_EQ(m1.str(), m2.str());
}

// Ablation -------------------------------------------------------------------

TEST(Ablation, FusionRowsDifferOnlyInFusionStages) {
  const RunConfig base;
  const auto rows = ablation_rows(base, AblationAxis::kFusionStages);
  ASSERT_EQ(rows.size(), 4u);
  const std::vector<std::string> labels{"4", "3+4", "2+3+4", "1+2+3+4"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].label, labels[i]);
    const auto diff = config_diff(base, rows[i].config);
    EXPECT_TRUE(diff.empty() || diff == std::vector<std::string>{"model.fusion_stages"});
  }
  EXPECT_EQ(rows[1].config, base);
}

TEST(Ablation, RowSets) {
  const RunConfig base;
  EXPECT_EQ(ablation_rows(base, AblationAxis::kTaskWeights).size(), 7u);
  EXPECT_EQ(ablation_rows(base, AblationAxis::kLossWeights).size(), 7u);
  const auto rob = ablation_rows(base, AblationAxis::kRobustness);
  ASSERT_EQ(rob.size(), 5u);
  EXPECT_EQ(rob[3].config.max_rot, 15.0);
  EXPECT_EQ(rob[3].config.max_trans, 0.5);
  for (const auto& r : ablation_rows(base, AblationAxis::kLossWeights))
    for (const auto& k : config_diff(base, r.config)) EXPECT_TRUE(k.starts_with("loss.")) << k;
  EXPECT_THROW(parse_axis("colour"), std::invalid_argument);
}

TEST(Ablation, TaskAxisWithoutImageWeightHasZeroImageMap) {
  auto base = tiny_config();
  base.steps = 1;
  base.out_dir = scratch("ablate_task").string();
  const auto results = run_ablation(base, AblationAxis::kTaskWeights, 1);
  ASSERT_EQ(results.size(), 7u);
  EXPECT_EQ(results.back().row, "1/0");
  EXPECT_EQ(results.back().map_2d, 0.0);
  const auto csv = slurp(fs::path(base.out_dir) / "ablation_task_weights.csv");
  EXPECT_TRUE(csv.starts_with("axis,row,seed,bev_map,map_2d\n"));
  for (const auto& s : summarize_ablation(results)) {
    EXPECT_EQ(s.bev_std, 0.0);
    EXPECT_EQ(s.map2d_std, 0.0);
  }
  Detector none([&] {
    auto c = base;
    c.loss.w_2d = 0.0;
    return c;
  }());
  EXPECT_FALSE(none.head_2d().has_value());
}

TEST(Ablation, SummaryStatistics) {
  std::vector<AblationResult> r{{"a", "x", 0, 10, 1}, {"a", "x", 1, 20, 3}, {"a", "y", 0, 5, 0}};
  const auto s = summarize_ablation(r);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].bev_mean, 15.0);
  EXPECT_DOUBLE_EQ(s[0].bev_std, 5.0);
  EXPECT_DOUBLE_EQ(s[0].map2d_mean, 2.0);
  EXPECT_DOUBLE_EQ(s[1].bev_std, 0.0);
}

// Visualisation --------------------------------------------------------------

TEST(Viz, PgmRoundTripAndDegenerateNormalisation) {
  const auto dir = scratch("pgm");
  const auto img = normalize_image({0.0, 0.5, 1.0, 0.25, 0.75, 1.0}, 2, 3);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 128, 255, 64, 191, 255}));
  write_pgm((dir / "a.pgm").string(), img);
  const auto back = read_pgm((dir / "a.pgm").string());
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  const auto flat = normalize_image(std::vector<double>(12, 1.0 / 7), 3, 4);
  EXPECT_EQ(flat.pixels, std::vector<std::uint8_t>(12, 0));
  std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_THROW(read_pgm((dir / "bad.pgm").string()), std::runtime_error);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
  EXPECT_THROW(read_pgm((dir / "short.pgm").string()), std::runtime_error);
}

TEST(Viz, WritesValidImagesPerStageAndQuery) {
  auto c = tiny_config();
  Detector det(c);
  const Dataset ds(c.dataset_spec());
  const auto pair = ds.pair(Split::kVal, 0);
  const auto dir = scratch("viz");
  const auto files = viz_attention(det, pair, {{ViewTag::kBev, 0, 1}, {ViewTag::kCamera, 0, 2}}, dir.string());
  // Stages 3 and 4: full matrix + two queries each, plus two input images.
  // Queries must fit the smallest grid (stage 4 camera is 1x3).
  ASSERT_EQ(files.size(), 2u * 3u + 2u);
  std::set<std::string> names;
  for (const auto& f : files) {
    names.insert(fs::path(f).filename().string());
    EXPECT_NO_THROW(read_pgm(f)) << f;
  }
  EXPECT_EQ(names.size(), files.size());
  EXPECT_TRUE(names.count("attn_stage3_bev_r0_c1.pgm"));
  EXPECT_TRUE(names.count("attn_stage3_camera_r0_c2.pgm"));
  // Stage 3 of the tiny model: BEV 4x4 tokens + camera 2x4 tokens (pool 4).
  const auto full = read_pgm((dir / "attn_stage3_full.pgm").string());
  EXPECT_EQ(full.width, 24u);
  EXPECT_EQ(full.height, 24u);
  const auto q = read_pgm((dir / "attn_stage3_bev_r0_c1.pgm").string());
  EXPECT_EQ(q.width, c.image_cols);
  EXPECT_EQ(q.height, c.image_rows);
  EXPECT_THROW(viz_attention(det, pair, {{ViewTag::kBev, 9, 0}}, dir.string()), std::out_of_range);
  EXPECT_EQ(parse_query("camera:2,7").col, 7u);
  EXPECT_THROW(parse_query("radar:1,1"), std::invalid_argument);
}

TEST(Viz, DefaultFullMatrixIsTokenCountSquare) {
  RunConfig c;
  c.stage_channels = {4, 4, 8, 8};
  c.d_model = 8;
  c.num_heads = 2;
  c.num_layers = 1;
  Detector det(c);
  const Dataset ds(c.dataset_spec());
  const auto dir = scratch("viz_default");
  viz_attention(det, ds.pair(Split::kVal, 0), {}, dir.string());
  // Stage 3: BEV 8x8 tokens + camera 4x8 tokens.
  EXPECT_EQ(read_pgm((dir / "attn_stage3_full.pgm").string()).width, 96u);
  EXPECT_EQ(read_pgm((dir / "attn_stage4_full.pgm").string()).width, 28u);
}

// Cost -----------------------------------------------------------------------

TEST(Cost, DoublingResolutionMultipliesBySixteen) {
  const auto rows = cost_report(RunConfig{});
  ASSERT_EQ(rows.size(), 8u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rows[i].scale, 1u);
    EXPECT_EQ(rows[i + 4].cost, 16 * rows[i].cost);
  }
  EXPECT_EQ(rows[0].cost, 262144u);  // stage 3 BEV: 8 x 8 x 64
  EXPECT_EQ(rows[4].cost, 4194304u);
}

TEST(Cost, TokenEntriesMatchInstrumentedForward) {
  RunConfig c;
  c.stage_channels = {4, 4, 8, 8};
  c.d_model = 8;
  c.num_heads = 2;
  Detector det(c);
  const Dataset ds(c.dataset_spec());
  const auto p = ds.pair(Split::kVal, 0);
  NoGradGuard ng;
  const auto out = det.forward(stack_views({&p.bev}), stack_views({&p.camera}));
  std::uint64_t expect = 0;
  for (const auto& r : cost_report(c, {1}))
    if (r.view == "bev") expect += r.token_entries;
  EXPECT_EQ(out.features.attention_entries, expect);
}

}  // namespace
}  // namespace lfusion
