#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camera.hpp"
#include "image_io.hpp"

namespace sqgs {

/// Calibrated views with foreground masks.
struct Dataset {
  std::string name;
  std::vector<Camera> cameras;
  std::vector<Image> images; // 3 channels in [0, 1]
  std::vector<Image> masks;  // 1 channel, values in {0, 1}
  Aabb bbox;
  std::vector<int> train; // empty: every view trains
  std::vector<int> test;

  std::size_t size() const { return cameras.size(); }

  std::vector<int> train_views() const {
    if (!train.empty())
      return train;
    std::vector<int> all(size());
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = static_cast<int>(i);
    return all;
  }

  /// Image with the background zeroed by the mask.
  Image masked_target(int v) const {
    Image t = images[v];
    for (std::size_t p = 0; p < t.pixels(); ++p)
      for (int c = 0; c < 3; ++c)
        t.data[p * 3 + c] *= masks[v].data[p];
    return t;
  }

  void validate() const {
    require(cameras.size() == images.size() && cameras.size() == masks.size(),
            "dataset: cameras, images and masks differ in count");
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      cameras[i].validate();
      require(images[i].width == cameras[i].width && images[i].height == cameras[i].height && images[i].channels == 3,
              "dataset: image " + std::to_string(i) + " does not match its camera");
      require(masks[i].width == cameras[i].width && masks[i].height == cameras[i].height && masks[i].channels == 1,
              "dataset: mask " + std::to_string(i) + " does not match its camera");
      for (double v : images[i].data)
        require(std::isfinite(v), "dataset: non-finite pixel in image " + std::to_string(i));
    }
    require(!bbox.degenerate(), "dataset: degenerate bounding box");
    for (int v : train)
      require(v >= 0 && static_cast<std::size_t>(v) < size(), "dataset: train index out of range");
    for (int v : test)
      require(v >= 0 && static_cast<std::size_t>(v) < size(), "dataset: test index out of range");
  }
};

inline nlohmann::json camera_to_json(const Camera &c) {
  const auto m = c.w2c();
  return {{"fx", c.fx},
          {"fy", c.fy},
          {"cx", c.cx},
          {"cy", c.cy},
          {"width", c.width},
          {"height", c.height},
          {"w2c", std::vector<double>(m.begin(), m.end())}};
}

inline Camera camera_from_json(const nlohmann::json &j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto m = j.at("w2c").get<std::vector<double>>();
  require(m.size() == 16, "camera: w2c must hold 16 row-major values");
  for (double v : m)
    require(std::isfinite(v), "camera: non-finite w2c entry");
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k)
      c.R(r, k) = m[r * 4 + k];
    c.t[r] = m[r * 4 + 3];
  }
  require(m[12] == 0.0 && m[13] == 0.0 && m[14] == 0.0 && m[15] == 1.0, "camera: w2c last row must be 0 0 0 1");
  c.validate();
  return c;
}

inline nlohmann::json bbox_to_json(const Aabb &b) {
  return {{"min", {b.lo.x(), b.lo.y(), b.lo.z()}}, {"max", {b.hi.x(), b.hi.y(), b.hi.z()}}};
}

inline Aabb bbox_from_json(const nlohmann::json &j) {
  const auto lo = j.at("min").get<std::vector<double>>();
  const auto hi = j.at("max").get<std::vector<double>>();
  require(lo.size() == 3 && hi.size() == 3, "bbox: min and max need 3 values");
  Aabb b{Vec3(lo[0], lo[1], lo[2]), Vec3(hi[0], hi[1], hi[2])};
  require(!b.degenerate(), "bbox: degenerate bounds");
  return b;
}

inline nlohmann::json read_json(const std::filesystem::path &p) {
  std::ifstream in(p);
  if (!in)
    throw Error("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path &p, const nlohmann::json &j, int indent = 1) {
  std::ofstream out(p);
  if (!out)
    throw Error("cannot write " + p.string());
  out << j.dump(indent) << "\n";
  if (!out)
    throw Error("failed while writing " + p.string());
}

inline std::vector<std::filesystem::path> sorted_pngs(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error("missing directory " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto &e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/**
 * Loads `cameras.json` plus the PNGs under `images/` and `masks/` (matched by sorted
 * filename). Pixels map to v / 255; mask pixels >= 128 are foreground.
 * The bounding box defaults to [-1, 1]^3.
 */
inline Dataset load_dataset(const std::filesystem::path &dir) {
  const auto meta_path = dir / "cameras.json";
  if (!std::filesystem::exists(meta_path))
    throw Error("missing " + meta_path.string());
  const auto meta = read_json(meta_path);
  Dataset ds;
  try {
    ds.name = meta.value("name", dir.filename().string());
    for (const auto &c : meta.at("cameras"))
      ds.cameras.push_back(camera_from_json(c));
    if (meta.contains("bbox"))
      ds.bbox = bbox_from_json(meta.at("bbox"));
    if (meta.contains("split")) {
      ds.train = meta.at("split").value("train", std::vector<int>{});
      ds.test = meta.at("split").value("test", std::vector<int>{});
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed cameras.json: " + std::string(e.what()));
  }
  const auto imgs = sorted_pngs(dir / "images");
  const auto msks = sorted_pngs(dir / "masks");
  if (imgs.size() != ds.cameras.size() || msks.size() != ds.cameras.size())
    throw Error("dataset count mismatch: " + std::to_string(ds.cameras.size()) + " cameras, " +
                std::to_string(imgs.size()) + " images, " + std::to_string(msks.size()) + " masks");
  ds.images.resize(imgs.size());
  ds.masks.resize(msks.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    ds.images[i] = load_png(imgs[i], 3);
    Image m = load_png(msks[i], 1);
    for (auto &v : m.data)
      v = v >= 128.0 / 255.0 ? 1.0 : 0.0;
    ds.masks[i] = std::move(m);
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const Dataset &ds, const std::filesystem::path &dir) {
  ds.validate();
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  nlohmann::json meta;
  meta["name"] = ds.name;
  meta["bbox"] = bbox_to_json(ds.bbox);
  meta["cameras"] = nlohmann::json::array();
  for (const auto &c : ds.cameras)
    meta["cameras"].push_back(camera_to_json(c));
  if (!ds.train.empty() || !ds.test.empty())
    meta["split"] = {{"train", ds.train}, {"test", ds.test}};
  write_json(dir / "cameras.json", meta);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu.png", i);
    save_png(ds.images[i], dir / "images" / name);
    save_png(ds.masks[i], dir / "masks" / name);
  }
}

} // namespace sqgs
