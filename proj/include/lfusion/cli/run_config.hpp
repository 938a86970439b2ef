#pragma once

// Everything one training/evaluation run depends on, and its text form:
// flat "key = value" lines, '#' comments, dotted keys for nesting.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfusion/fusenet/config.hpp"
#include "lfusion/losses/losses.hpp"
#include "lfusion/scenesynth/dataset.hpp"

namespace lfusion {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // model
  Modality modality = Modality::kFusion;
  std::set<int> fusion_stages{3, 4};
  std::size_t pool_size = 8;
  std::size_t d_model = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  bool positional_embedding = true;
  double pos_init_std = 0.02;
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 64};
  std::size_t decoder_channels = 32;
  std::size_t head_hidden = 16;

  // data
  std::uint64_t data_seed = 1;
  std::size_t train_size = 2000, val_size = 500, test_size = 500;
  std::size_t bev_rows = 64, bev_cols = 64;
  double bev_cell = 0.8;
  std::size_t image_rows = 32, image_cols = 96;
  std::size_t min_clutter = 0, max_clutter = 6;
  double vehicle_fraction = 0.75;

  LossWeights loss;

  // optimizer
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay = 0.99996;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t steps = 5000;

  // augmentation
  bool mirror = true;
  double mirror_prob = 0.5;
  double max_rot = 0.0;    // degrees, per-frame rigid BEV perturbation
  double max_trans = 0.0;  // metres

  // evaluation and logging
  std::size_t eval_interval = 1000;  // 0: evaluate only at the end
  std::size_t eval_frames = 0;       // 0: whole split
  std::size_t log_interval = 50;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  double score_threshold = 0.05;
  std::size_t top_k = 64;

  std::string out_dir = "runs/default";
  std::uint64_t seed = 0;

  bool operator==(const RunConfig&) const = default;

  ModelConfig model_config() const {
    ModelConfig m;
    m.fusion.fusion_stages = fusion_stages;
    m.fusion.pool_size = pool_size;
    m.fusion.d_model = d_model;
    m.fusion.num_heads = num_heads;
    m.fusion.num_layers_per_fusion = num_layers;
    m.fusion.positional_embedding = positional_embedding;
    m.fusion.positional_init_std = pos_init_std;
    m.fusion.modality = modality;
    m.bev = {bev_rows, bev_cols, 2};
    m.camera = {image_rows, image_cols, 3};
    m.stage_channels = stage_channels;
    m.decoder_channels = decoder_channels;
    m.head_hidden = head_hidden;
    m.num_classes = kNumCategories;
    return m;
  }

  DatasetSpec dataset_spec() const {
    DatasetSpec d;
    d.seed = data_seed;
    d.train_size = train_size;
    d.val_size = val_size;
    d.test_size = test_size;
    d.sensors.bev_rows = bev_rows;
    d.sensors.bev_cols = bev_cols;
    d.sensors.bev_cell = bev_cell;
    d.sensors.image_rows = image_rows;
    d.sensors.image_cols = image_cols;
    d.scene.min_clutter = min_clutter;
    d.scene.max_clutter = max_clutter;
    d.scene.vehicle_fraction = vehicle_fraction;
    return d;
  }

  /// A 2D head exists only when the camera branch exists and its task weight is non-zero.
  bool has_2d_head() const { return uses_camera(modality) && loss.w_2d > 0.0; }
  bool has_bev_head() const { return uses_bev(modality); }

  void validate() const {
    model_config().validate();
    loss.validate();
    if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("optim betas must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (train_size == 0) throw ConfigError("data.train_size must be positive");
    if (mirror_prob < 0.0 || mirror_prob > 1.0) throw ConfigError("augment.mirror_prob must lie in [0, 1]");
    if (max_rot < 0.0 || max_rot > 180.0 || max_trans < 0.0)
      throw ConfigError("augment.max_rot must lie in [0, 180] and augment.max_trans be non-negative");
    if (!has_bev_head()) throw ConfigError("camera_only runs have no BEV head to train or evaluate");
    if (max_clutter < min_clutter) throw ConfigError("data.max_clutter below data.min_clutter");
    if (vehicle_fraction < 0.0 || vehicle_fraction > 1.0) throw ConfigError("data.vehicle_fraction must lie in [0, 1]");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ConfigError("cannot format number");
  return std::string(buf, p);
}

template <class N>
N parse_number(const std::string& key, const std::string& s) {
  N v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ConfigField {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// Key table in output order.
inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  using F = ConfigField;
  static const auto fields = [] {
    std::vector<std::pair<std::string, F>> f;
    auto size = [&](const char* key, std::size_t RunConfig::*m) {
      f.emplace_back(key, F{[m](const RunConfig& c) { return std::to_string(c.*m); },
                            [m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<std::size_t>(key, v); }});
    };
    auto u64 = [&](const char* key, std::uint64_t RunConfig::*m) {
      f.emplace_back(key, F{[m](const RunConfig& c) { return std::to_string(c.*m); },
                            [m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<std::uint64_t>(key, v); }});
    };
    auto real = [&](const char* key, double RunConfig::*m) {
      f.emplace_back(key, F{[m](const RunConfig& c) { return format_double(c.*m); },
                            [m, key](RunConfig& c, const std::string& v) { c.*m = parse_number<double>(key, v); }});
    };
    auto weight = [&](const char* key, double LossWeights::*m) {
      f.emplace_back(key, F{[m](const RunConfig& c) { return format_double(c.loss.*m); },
                            [m, key](RunConfig& c, const std::string& v) { c.loss.*m = parse_number<double>(key, v); }});
    };

    f.emplace_back("model.modality", F{[](const RunConfig& c) { return to_string(c.modality); },
                                       [](RunConfig& c, const std::string& v) {
                                         try {
                                           c.modality = parse_modality(v);
                                         } catch (const std::invalid_argument& e) {
                                           throw ConfigError(std::string("model.modality: ") + e.what());
                                         }
                                       }});
    f.emplace_back("model.fusion_stages", F{[](const RunConfig& c) {
                                              std::string s;
                                              for (int st : c.fusion_stages) s += (s.empty() ? "" : ",") + std::to_string(st);
                                              return s;
                                            },
                                            [](RunConfig& c, const std::string& v) {
                                              c.fusion_stages.clear();
                                              for (const auto& item : split_list(v))
                                                c.fusion_stages.insert(parse_number<int>("model.fusion_stages", item));
                                            }});
    size("model.pool_size", &RunConfig::pool_size);
    size("model.d_model", &RunConfig::d_model);
    size("model.num_heads", &RunConfig::num_heads);
    size("model.num_layers", &RunConfig::num_layers);
    f.emplace_back("model.positional_embedding",
                   F{[](const RunConfig& c) { return std::string(c.positional_embedding ? "true" : "false"); },
                     [](RunConfig& c, const std::string& v) {
                       c.positional_embedding = parse_bool("model.positional_embedding", v);
                     }});
    real("model.pos_init_std", &RunConfig::pos_init_std);
    f.emplace_back("model.stage_channels", F{[](const RunConfig& c) {
                                               std::string s;
                                               for (auto ch : c.stage_channels) s += (s.empty() ? "" : ",") + std::to_string(ch);
                                               return s;
                                             },
                                             [](RunConfig& c, const std::string& v) {
                                               const auto items = split_list(v);
                                               if (items.size() != 4)
                                                 throw ConfigError("model.stage_channels: expected 4 values");
                                               for (std::size_t i = 0; i < 4; ++i)
                                                 c.stage_channels[i] = parse_number<std::size_t>("model.stage_channels", items[i]);
                                             }});
    size("model.decoder_channels", &RunConfig::decoder_channels);
    size("model.head_hidden", &RunConfig::head_hidden);

    u64("data.seed", &RunConfig::data_seed);
    size("data.train_size", &RunConfig::train_size);
    size("data.val_size", &RunConfig::val_size);
    size("data.test_size", &RunConfig::test_size);
    size("data.bev_rows", &RunConfig::bev_rows);
    size("data.bev_cols", &RunConfig::bev_cols);
    real("data.bev_cell", &RunConfig::bev_cell);
    size("data.image_rows", &RunConfig::image_rows);
    size("data.image_cols", &RunConfig::image_cols);
    size("data.min_clutter", &RunConfig::min_clutter);
    size("data.max_clutter", &RunConfig::max_clutter);
    real("data.vehicle_fraction", &RunConfig::vehicle_fraction);

    weight("loss.w_fg", &LossWeights::w_fg);
    weight("loss.w_bg", &LossWeights::w_bg);
    weight("loss.w_heat", &LossWeights::w_heat);
    weight("loss.w_bbox", &LossWeights::w_bbox);
    weight("loss.w_theta", &LossWeights::w_theta);
    weight("loss.w_bev", &LossWeights::w_bev);
    weight("loss.w_2d", &LossWeights::w_2d);

    real("optim.lr", &RunConfig::lr);
    real("optim.weight_decay", &RunConfig::weight_decay);
    real("optim.lr_decay", &RunConfig::lr_decay);
    real("optim.beta1", &RunConfig::beta1);
    real("optim.beta2", &RunConfig::beta2);
    real("optim.eps", &RunConfig::eps);
    size("train.batch_size", &RunConfig::batch_size);
    size("train.steps", &RunConfig::steps);

    f.emplace_back("augment.mirror", F{[](const RunConfig& c) { return std::string(c.mirror ? "true" : "false"); },
                                       [](RunConfig& c, const std::string& v) { c.mirror = parse_bool("augment.mirror", v); }});
    real("augment.mirror_prob", &RunConfig::mirror_prob);
    real("augment.max_rot", &RunConfig::max_rot);
    real("augment.max_trans", &RunConfig::max_trans);

    size("eval.interval", &RunConfig::eval_interval);
    size("eval.frames", &RunConfig::eval_frames);
    size("log.interval", &RunConfig::log_interval);
    size("checkpoint.interval", &RunConfig::checkpoint_interval);
    real("eval.score_threshold", &RunConfig::score_threshold);
    size("eval.top_k", &RunConfig::top_k);

    f.emplace_back("run.out_dir", F{[](const RunConfig& c) { return c.out_dir; },
                                    [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
    u64("run.seed", &RunConfig::seed);
    return f;
  }();
  return fields;
}

}  // namespace detail

inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

/// Applies "key = value" lines on top of `base`. Unknown keys and malformed
/// lines are rejected with their line number.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::map<std::string, const detail::ConfigField*> index;
  for (const auto& [key, field] : detail::config_fields()) index[key] = &field;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto value = detail::trim(std::string_view(line).substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(base, value);
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Keys whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  for (const auto& [key, field] : detail::config_fields())
    if (field.get(a) != field.get(b)) out.push_back(key);
  return out;
}

/// Architecture stamp: FNV-1a over every key that determines parameter
/// names and shapes. Two configs with equal stamps load each other's checkpoints.
inline std::uint64_t architecture_stamp(const RunConfig& c) {
  static const std::set<std::string> keys{"model.modality",   "model.fusion_stages",    "model.pool_size",
                                          "model.d_model",    "model.num_heads",        "model.num_layers",   "model.positional_embedding",
                                          "model.stage_channels", "model.decoder_channels", "model.head_hidden",
                                          "data.bev_rows",    "data.bev_cols",          "data.image_rows",
                                          "data.image_cols"};
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [key, field] : detail::config_fields())
    if (keys.count(key)) mix(key + "=" + field.get(c) + ";");
  mix(c.has_2d_head() ? "head2d" : "nohead2d");
  return h;
}

}  // namespace lfusion
