#pragma once

// Attention images as binary 8-bit PGM (P5): the full head/layer-averaged
// matrix per fusion stage, and per query token its attention over the other
// view's token grid, upsampled to that view's raster.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lfusion/cli/pipeline.hpp"

namespace lfusion {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Linear normalisation min -> 0, max -> 255. A constant image (max == min) maps to all zeros.
inline GrayImage normalize_image(const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw std::invalid_argument("normalize_image: size mismatch");
  GrayImage img{width, height, std::vector<std::uint8_t>(values.size(), 0)};
  if (values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) return img;
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
  return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

/// Strict P5 reader (8-bit, maxval <= 255, '#' comments in the header).
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> std::runtime_error { return std::runtime_error(path + ": " + why); };
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw fail("not a binary PGM (P5)");
  pos = 2;
  auto next_int = [&]() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) throw fail("malformed header");
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) v = v * 10 + (buf[pos++] - '0');
    return v;
  };
  GrayImage img;
  img.width = next_int();
  img.height = next_int();
  const auto maxval = next_int();
  if (img.width == 0 || img.height == 0) throw fail("zero-sized image");
  if (maxval == 0 || maxval > 255) throw fail("maxval must lie in 1..255");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) throw fail("missing header terminator");
  ++pos;
  if (buf.size() - pos != img.width * img.height)
    throw fail("payload has " + std::to_string(buf.size() - pos) + " bytes, expected " +
               std::to_string(img.width * img.height));
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  return img;
}

/// Bilinear upsampling of a rows x cols grid to h x w (align-corners off).
inline std::vector<double> upsample_grid(const std::vector<double>& g, std::size_t rows, std::size_t cols,
                                         std::size_t h, std::size_t w) {
  std::vector<double> out(h * w);
  auto src = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  };
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = src(y, h, rows);
    const auto y0 = static_cast<std::size_t>(sy);
    const auto y1 = std::min(y0 + 1, rows - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = src(x, w, cols);
      const auto x0 = static_cast<std::size_t>(sx);
      const auto x1 = std::min(x0 + 1, cols - 1);
      const double fx = sx - static_cast<double>(x0);
      out[y * w + x] = (1 - fy) * ((1 - fx) * g[y0 * cols + x0] + fx * g[y0 * cols + x1]) +
                       fy * ((1 - fx) * g[y1 * cols + x0] + fx * g[y1 * cols + x1]);
    }
  }
  return out;
}

/// A query token, addressed in the token grid of its view at the stage being drawn.
struct QueryCell {
  ViewTag view = ViewTag::kBev;
  std::size_t row = 0, col = 0;
};

/// Parses "bev:R,C" or "camera:R,C".
inline QueryCell parse_query(const std::string& s) {
  const auto colon = s.find(':'), comma = s.find(',');
  if (colon == std::string::npos || comma == std::string::npos || comma < colon)
    throw std::invalid_argument("query '" + s + "': expected VIEW:ROW,COL");
  QueryCell q;
  const auto view = s.substr(0, colon);
  if (view == "bev") q.view = ViewTag::kBev;
  else if (view == "camera") q.view = ViewTag::kCamera;
  else throw std::invalid_argument("query '" + s + "': view must be bev or camera");
  q.row = std::stoul(s.substr(colon + 1, comma - colon - 1));
  q.col = std::stoul(s.substr(comma + 1));
  return q;
}

inline const char* view_name(ViewTag v) { return v == ViewTag::kBev ? "bev" : "camera"; }

/// Writes the attention images for one frame into `dir` and returns the paths.
/// Queries outside a stage's token grid are rejected.
inline std::vector<std::string> viz_attention(const Detector& det, const SensorPair& pair,
                                              const std::vector<QueryCell>& queries, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  NoGradGuard ng;
  const auto bev = stack_views({&pair.bev}), cam = stack_views({&pair.camera});
  const auto out = det.forward(bev, cam, true);
  if (out.features.records.empty()) throw std::invalid_argument("viz_attention: model has no fusion stages");
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::vector<double>& v, std::size_t h, std::size_t w) {
    const auto path = (fs::path(dir) / name).string();
    write_pgm(path, normalize_image(v, h, w));
    files.push_back(path);
  };
  std::vector<int> stages;
  for (const auto& r : out.features.records)
    if (std::find(stages.begin(), stages.end(), r.stage) == stages.end()) stages.push_back(r.stage);
  for (int stage : stages) {
    const AttentionRecord<float>* rec = nullptr;
    for (const auto& r : out.features.records)
      if (r.stage == stage) rec = &r;
    for (const auto& q : queries) {
      const std::size_t v = rec->tags[0] == q.view ? 0 : 1;
      const auto& g = rec->grids[v];
      if (q.row >= g.rows || q.col >= g.cols)
        throw std::out_of_range(std::string("viz_attention: query ") + view_name(q.view) + ":" + std::to_string(q.row) +
                                "," + std::to_string(q.col) + " outside the " + std::to_string(g.rows) + "x" +
                                std::to_string(g.cols) + " token grid of stage " + std::to_string(stage));
    }
    const auto attn = mean_attention(out.features.records, stage, 0);
    const std::size_t Tn = rec->tokens();
    emit("attn_stage" + std::to_string(stage) + "_full.pgm", attn, Tn, Tn);
    for (const auto& q : queries) {
      const std::size_t v = rec->tags[0] == q.view ? 0 : 1, o = 1 - v;
      const auto& self = rec->grids[v];
      const auto& other = rec->grids[o];
      const std::size_t row = rec->partition[v].begin + q.row * self.cols + q.col;
      std::vector<double> grid(other.count());
      for (std::size_t t = 0; t < grid.size(); ++t) grid[t] = attn[row * Tn + rec->partition[o].begin + t];
      const bool to_bev = rec->tags[o] == ViewTag::kBev;
      const std::size_t h = to_bev ? pair.bev.dim(0) : pair.camera.dim(0);
      const std::size_t w = to_bev ? pair.bev.dim(1) : pair.camera.dim(1);
      emit("attn_stage" + std::to_string(stage) + "_" + view_name(q.view) + "_r" + std::to_string(q.row) + "_c" +
               std::to_string(q.col) + ".pgm",
           upsample_grid(grid, other.rows, other.cols, h, w), h, w);
    }
  }
  // Context images of both inputs.
  std::vector<double> occ(pair.bev.dim(0) * pair.bev.dim(1)), gray(pair.camera.dim(0) * pair.camera.dim(1));
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = pair.bev.data()[2 * i];
  for (std::size_t i = 0; i < gray.size(); ++i)
    gray[i] = (pair.camera.data()[3 * i] + pair.camera.data()[3 * i + 1] + pair.camera.data()[3 * i + 2]) / 3.0;
  emit("input_bev.pgm", occ, pair.bev.dim(0), pair.bev.dim(1));
  emit("input_camera.pgm", gray, pair.camera.dim(0), pair.camera.dim(1));
  return files;
}

}  // namespace lfusion
