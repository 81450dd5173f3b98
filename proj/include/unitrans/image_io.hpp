#pragma once

// Image files on disk (OpenCV codecs). Kept apart from the core headers so
// that only tools that touch files link against OpenCV.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>
#include <vector>

#include "unitrans/data_pipeline.hpp"

namespace unitrans {

namespace fs = std::filesystem;

inline bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// 8-bit RGB in [0,255] -> [-1,1], resized to res x res with area averaging.
inline Tensor<float> mat_to_image(const cv::Mat& bgr, int res) {
  cv::Mat rgb, sized;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != res || rgb.cols != res) cv::resize(rgb, sized, cv::Size(res, res), 0, 0, cv::INTER_AREA);
  else sized = rgb;
  Tensor<float> img({res, res, 3});
  for (int y = 0; y < res; ++y) {
    const auto* row = sized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < res; ++x)
      for (int c = 0; c < 3; ++c) img[(y * res + x) * 3 + c] = row[x][c] / 127.5f - 1.0f;
  }
  return img;
}

inline Tensor<float> read_image(const std::string& path, int res) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw DataError("cannot decode image " + path);
  return mat_to_image(m, res);
}

inline void write_png(const Tensor<float>& image, const std::string& path) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_png expects [H,W,3]");
  const int H = static_cast<int>(image.dim(0)), W = static_cast<int>(image.dim(1));
  cv::Mat m(H, W, CV_8UC3);
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp((image[(y * W + x) * 3 + c] + 1.0f) * 127.5f, 0.0f, 255.0f);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v));
      }
  }
  if (!cv::imwrite(path, m)) throw DataError("cannot write image " + path);
}

// root/<class>/*.{png,jpg} (labels by sorted class name) or a flat root of
// images (unlabeled). Undecodable files are skipped with a warning.
inline ImageDataset load_image_folder(const std::string& root, int res, std::ostream& warn = std::cerr) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);
  std::vector<fs::path> classes, flat;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path());
    else if (e.is_regular_file() && is_image_file(e.path())) flat.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  std::sort(flat.begin(), flat.end());
  ImageDataset ds;
  ds.resolution = res;
  std::size_t skipped = 0, seen = 0;
  auto add = [&](const fs::path& p, int label) {
    ++seen;
    try {
      ds.records.push_back({read_image(p.string(), res), label, p.filename().string()});
    } catch (const DataError& e) {
      ++skipped;
      warn << "warning: " << e.what() << '\n';
    }
  };
  if (!classes.empty()) {
    for (std::size_t k = 0; k < classes.size(); ++k) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(classes[k]))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      ds.class_names.push_back(classes[k].filename().string());
      for (const auto& f : files) add(f, static_cast<int>(k));
    }
  } else {
    for (const auto& f : flat) add(f, -1);
  }
  if (seen == 0) throw DataError("no images found under " + root);
  if (ds.records.empty()) throw DataError("none of the " + std::to_string(seen) + " images under " + root + " decoded");
  return ds;
}

// Writes a labeled dataset as root/<class>/<name>.png.
inline void save_image_folder(const ImageDataset& ds, const std::string& root) {
  fs::create_directories(root);
  for (const auto& r : ds.records) {
    fs::path dir = root;
    if (r.label >= 0) dir /= ds.class_names.at(r.label);
    fs::create_directories(dir);
    write_png(r.image, (dir / (r.name + ".png")).string());
  }
}

// Grid of images (rows x cols), each [H,W,3]; missing cells stay black.
inline Tensor<float> montage(const std::vector<std::vector<Tensor<float>>>& rows, std::int64_t h, std::int64_t w) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const auto R = static_cast<std::int64_t>(rows.size()), C = static_cast<std::int64_t>(std::max<std::size_t>(cols, 1));
  Tensor<float> out({std::max<std::int64_t>(R, 1) * h, C * w, 3}, -1.0f);
  for (std::int64_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const auto& img = rows[i][j];
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c)
            out[((i * h + y) * C * w + static_cast<std::int64_t>(j) * w + x) * 3 + c] = img[(y * w + x) * 3 + c];
    }
  return out;
}

}  // namespace unitrans
