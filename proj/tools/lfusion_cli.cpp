#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lfusion/cli/ablation.hpp"
#include "lfusion/cli/cost.hpp"
#include "lfusion/cli/viz.hpp"

namespace fs = std::filesystem;
using namespace lfusion;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "Config file (key = value lines)");
  app->add_option("--seed", f.seed, "Master seed (overrides run.seed)");
  app->add_option("--out", f.out, "Output directory (overrides run.out_dir)");
  app->add_option("--set", f.sets, "Extra config line KEY=VALUE, may repeat");
}

RunConfig resolve_config(const CommonFlags& f, RunConfig base = {}) {
  RunConfig c = f.config_path.empty() ? base : load_config(f.config_path, base);
  std::string extra;
  for (const auto& s : f.sets) extra += s + "\n";
  c = parse_config(extra, c);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  return c;
}

void print_summary(const MetricsSummary& s) {
  std::printf("bev_map %.3f", s.bev_map);
  if (s.map_2d) std::printf("  map_2d %.3f", *s.map_2d);
  if (s.mean_yaw_err) std::printf("  mean_yaw_err %.4f", *s.mean_yaw_err);
  if (s.focus_ratio_mean) std::printf("  focus_ratio_mean %.3f", *s.focus_ratio_mean);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration-free camera/lidar fusion detector"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, ablate_f, viz_f, cost_f;

  auto* train = app.add_subcommand("train", "Train a model and write metrics.jsonl and final.lfck");
  add_common(train, train_f);
  bool verbose = false;
  train->add_flag("-v,--verbose", verbose, "Print the loss at each log interval");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval, eval_f);
  std::string eval_ckpt, eval_split = "val";
  double eval_rot = 0.0, eval_trans = 0.0;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint (default <out>/final.lfck)");
  eval->add_option("--split", eval_split, "Split")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--rot", eval_rot, "Max test-time rotation of the BEV view, degrees")->check(CLI::Range(0.0, 180.0));
  eval->add_option("--trans", eval_trans, "Max test-time translation of the BEV view, metres")->check(CLI::NonNegativeNumber);

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep and write its CSV tables");
  add_common(ablate, ablate_f);
  std::string axis = "fusion_stages";
  std::size_t seeds = 1;
  ablate->add_option("--axis", axis, "fusion_stages | task_weights | loss_weights | robustness")
      ->check(CLI::IsMember({"fusion_stages", "task_weights", "loss_weights", "robustness"}));
  ablate->add_option("--seeds", seeds, "Seeds per row")->check(CLI::PositiveNumber);

  auto* viz = app.add_subcommand("viz", "Write attention images (PGM) for one scene");
  add_common(viz, viz_f);
  std::string viz_ckpt, viz_split = "val";
  std::size_t viz_index = 0;
  std::vector<std::string> viz_queries;
  viz->add_option("--checkpoint", viz_ckpt, "Checkpoint (default <out>/final.lfck)");
  viz->add_option("--split", viz_split, "Split")->check(CLI::IsMember({"train", "val", "test"}));
  viz->add_option("--scene", viz_index, "Scene index within the split");
  viz->add_option("--query", viz_queries, "Query token VIEW:ROW,COL (view bev or camera), may repeat");

  auto* cost = app.add_subcommand("cost", "Print the attention cost table for the configured resolutions");
  add_common(cost, cost_f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = resolve_config(train_f);
      TrainOptions opt;
      opt.quiet = !verbose;
      const auto res = run_train(cfg, opt);
      std::printf("trained %zu steps -> %s\n", cfg.steps, (fs::path(cfg.out_dir) / "final.lfck").c_str());
      print_summary(res.final_metrics);
    } else if (*eval) {
      const auto path = eval_ckpt.empty() ? (fs::path(resolve_config(eval_f).out_dir) / "final.lfck").string() : eval_ckpt;
      const auto ckpt = load_checkpoint(path);
      // Without --config the checkpoint's own snapshot describes the model.
      const auto cfg = resolve_config(eval_f, parse_config(ckpt.config_text));
      EvalOptions opt;
      opt.split = parse_split(eval_split);
      opt.max_rot = eval_rot;
      opt.max_trans = eval_trans;
      opt.seed = cfg.seed;
      opt.frames = cfg.eval_frames;
      const auto s = run_eval(ckpt, cfg, opt);
      fs::create_directories(cfg.out_dir);
      std::ofstream os(fs::path(cfg.out_dir) / ("eval_" + eval_split + ".jsonl"));
      const nlohmann::json extra{{"rot", eval_rot}, {"trans", eval_trans}, {"checkpoint", path}};
      write_metrics_jsonl(os, s, eval_split, category_names(), extra);
      write_metrics_jsonl(std::cout, s, eval_split, category_names(), extra);
    } else if (*ablate) {
      const auto cfg = resolve_config(ablate_f);
      const auto results = run_ablation(cfg, parse_axis(axis), seeds);
      write_ablation_summary_csv(std::cout, axis, summarize_ablation(results));
    } else if (*viz) {
      const auto path = viz_ckpt.empty() ? (fs::path(resolve_config(viz_f).out_dir) / "final.lfck").string() : viz_ckpt;
      const auto ckpt = load_checkpoint(path);
      const auto cfg = resolve_config(viz_f, parse_config(ckpt.config_text));
      const auto det = load_detector(ckpt, cfg);
      std::vector<QueryCell> queries;
      for (const auto& q : viz_queries) queries.push_back(parse_query(q));
      const Dataset ds(cfg.dataset_spec());
      const auto pair = ds.pair(parse_split(viz_split), viz_index);
      for (const auto& f : viz_attention(det, pair, queries, (fs::path(cfg.out_dir) / "viz").string()))
        std::printf("%s\n", f.c_str());
    } else if (*cost) {
      print_cost_report(std::cout, cost_report(resolve_config(cost_f)));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
