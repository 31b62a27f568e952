#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "gradients.hpp"
#include "synthetic.hpp"

namespace sqgs {

static_assert(std::endian::native == std::endian::little, "PLY writers assume a little-endian host");

// ---------------------------------------------------------------------------
// Block meshes and the scene descriptor

inline void write_obj(const SqMesh &m, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write " + path.string());
  out.precision(9);
  for (const auto &v : m.vertices)
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto &f : m.faces)
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out)
    throw Error("failed while writing " + path.string());
}

inline nlohmann::json block_descriptor(const Block &b) {
  const SqShape s = b.shape();
  const Pose p = b.pose();
  const Vec4 q = p.q.normalized();
  return {{"id", b.id},
          {"alive", b.alive},
          {"eps1", s.eps1},
          {"eps2", s.eps2},
          {"s", {s.scale.x(), s.scale.y(), s.scale.z()}},
          {"quaternion", {q[0], q[1], q[2], q[3]}},
          {"t", {p.t.x(), p.t.y(), p.t.z()}},
          {"tau", b.tau()},
          {"params", std::vector<double>(b.params.begin(), b.params.end())}};
}

inline nlohmann::json scene_descriptor(const HybridScene &scene) {
  nlohmann::json j;
  j["icosphere_level"] = scene.settings.level;
  j["bbox"] = bbox_to_json(scene.bbox);
  j["blocks"] = nlohmann::json::array();
  for (const auto &b : scene.blocks)
    if (b.alive)
      j["blocks"].push_back(block_descriptor(b));
  return j;
}

/// block_<id>.obj per alive block (world frame) plus scene.json.
inline void export_blocks(const HybridScene &scene, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (const auto &b : scene.blocks)
    if (b.alive)
      write_obj(world_mesh(b, scene.ico), dir / ("block_" + std::to_string(b.id) + ".obj"));
  write_json(dir / "scene.json", scene_descriptor(scene));
}

/// Block parameters from a scene descriptor, bit-exact through the raw "params" array.
inline std::vector<std::pair<int, BlockParams>> load_scene_descriptor(const std::filesystem::path &path) {
  const auto j = read_json(path);
  std::vector<std::pair<int, BlockParams>> out;
  try {
    for (const auto &b : j.at("blocks")) {
      const auto p = b.at("params").get<std::vector<double>>();
      require(p.size() == param::kCount, "scene descriptor: params must hold 13 values");
      BlockParams bp{};
      for (int i = 0; i < param::kCount; ++i) {
        require(std::isfinite(p[i]), "scene descriptor: non-finite parameter");
        bp[i] = p[i];
      }
      out.emplace_back(b.at("id").get<int>(), bp);
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed scene descriptor: " + std::string(e.what()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PLY

namespace detail {

template <typename T> void put(std::ostream &out, T v) { out.write(reinterpret_cast<const char *>(&v), sizeof(T)); }

template <typename T> T get(std::istream &in) {
  T v;
  in.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!in)
    throw Error("PLY body ends early");
  return v;
}

struct PlyHeader {
  std::size_t count = 0;
  std::vector<std::pair<std::string, std::string>> props; // (type, name)
};

inline PlyHeader read_ply_header(std::istream &in, const std::string &what) {
  std::string line;
  std::getline(in, line);
  if (line != "ply")
    throw Error(what + ": not a PLY file");
  PlyHeader h;
  bool format_ok = false, vertex = false;
  while (std::getline(in, line)) {
    if (line == "end_header")
      break;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      format_ok = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string name;
      long long n = -1;
      ls >> name >> n;
      if (name != "vertex" || n < 0)
        throw Error(what + ": expected a single vertex element");
      h.count = static_cast<std::size_t>(n);
      vertex = true;
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      h.props.emplace_back(type, name);
    }
  }
  if (line != "end_header" || !format_ok || !vertex)
    throw Error(what + ": unsupported or truncated PLY header");
  return h;
}

} // namespace detail

/**
 * Splat layout, one record per splat, little endian:
 *   x y z (f32), qw qx qy qz (f32, frame rotation, columns normal/r2/r3),
 *   scale2 scale3 (f32), opacity (f32), block_id (i32),
 *   sh_0 .. sh_{3K-1} (f32, coefficient-major, RGB interleaved).
 */
inline void export_splats(const SplatSet &s, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  const int k3 = s.coeffs() * 3;
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "comment splat record: position, frame quaternion (w x y z), scale2, scale3, opacity, block_id, sh\n";
  out << "comment sh_degree " << s.sh_degree << "\n";
  out << "element vertex " << s.size() << "\n";
  for (const char *n : {"x", "y", "z", "qw", "qx", "qy", "qz", "scale2", "scale3", "opacity"})
    out << "property float " << n << "\n";
  out << "property int block_id\n";
  for (int i = 0; i < k3; ++i)
    out << "property float sh_" << i << "\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Splat &sp = s.splats[i];
    for (int k = 0; k < 3; ++k)
      detail::put<float>(out, static_cast<float>(sp.center[k]));
    const Vec4 q = matrix_to_quat(sp.frame);
    for (int k = 0; k < 4; ++k)
      detail::put<float>(out, static_cast<float>(q[k]));
    detail::put<float>(out, static_cast<float>(sp.scale2));
    detail::put<float>(out, static_cast<float>(sp.scale3));
    detail::put<float>(out, static_cast<float>(sp.opacity));
    detail::put<std::int32_t>(out, sp.block_id);
    for (int k = 0; k < k3; ++k)
      detail::put<float>(out, static_cast<float>(s.sh[i * k3 + k]));
  }
  if (!out)
    throw Error("failed while writing " + path.string());
}

inline SplatSet import_splats(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  const auto h = detail::read_ply_header(in, path.string());
  const std::vector<std::string> fixed = {"x", "y", "z", "qw", "qx", "qy", "qz", "scale2", "scale3", "opacity", "block_id"};
  require(h.props.size() >= fixed.size(), path.string() + ": missing splat properties");
  for (std::size_t i = 0; i < fixed.size(); ++i)
    require(h.props[i].second == fixed[i], path.string() + ": unexpected property '" + h.props[i].second + "'");
  const int k3 = static_cast<int>(h.props.size() - fixed.size());
  int degree = -1;
  for (int d = 0; d <= 3; ++d)
    if (sh_coeff_count(d) * 3 == k3)
      degree = d;
  require(degree >= 0, path.string() + ": SH property count does not match any degree");
  SplatSet s;
  s.sh_degree = degree;
  s.splats.resize(h.count);
  s.sh.resize(h.count * k3);
  for (std::size_t i = 0; i < h.count; ++i) {
    Splat &sp = s.splats[i];
    for (int k = 0; k < 3; ++k)
      sp.center[k] = detail::get<float>(in);
    Vec4 q;
    for (int k = 0; k < 4; ++k)
      q[k] = detail::get<float>(in);
    sp.scale2 = detail::get<float>(in);
    sp.scale3 = detail::get<float>(in);
    sp.opacity = detail::get<float>(in);
    sp.block_id = detail::get<std::int32_t>(in);
    for (int k = 0; k < k3; ++k)
      s.sh[i * k3 + k] = detail::get<float>(in);
    const bool finite = sp.center.allFinite() && q.allFinite() && std::isfinite(sp.scale2) &&
                        std::isfinite(sp.scale3) && std::isfinite(sp.opacity) && q.norm() > 0.0;
    require(finite, path.string() + ": non-finite splat record " + std::to_string(i));
    sp.frame = quat_to_matrix<double>(q);
  }
  s.face.assign(h.count, -1);
  return s;
}

/// Labeled point cloud: x y z (f32), label (i32).
inline void export_points(const std::vector<Vec3> &pts, const std::vector<int> &labels,
                          const std::filesystem::path &path) {
  require(labels.empty() || labels.size() == pts.size(), "export_points: label count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << pts.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      detail::put<float>(out, static_cast<float>(pts[i][k]));
    detail::put<std::int32_t>(out, labels.empty() ? 0 : labels[i]);
  }
  if (!out)
    throw Error("failed while writing " + path.string());
}

inline std::vector<Vec3> import_points(const std::filesystem::path &path, std::vector<int> *labels = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  const auto h = detail::read_ply_header(in, path.string());
  require(h.props.size() == 4 && h.props[3].second == "label", path.string() + ": expected x y z label");
  std::vector<Vec3> pts(h.count);
  if (labels)
    labels->resize(h.count);
  for (std::size_t i = 0; i < h.count; ++i) {
    for (int k = 0; k < 3; ++k)
      pts[i][k] = detail::get<float>(in);
    const int l = detail::get<std::int32_t>(in);
    require(pts[i].allFinite(), path.string() + ": non-finite point");
    if (labels)
      (*labels)[i] = l;
  }
  return pts;
}

/// 8-bit PNG of the rendered colors.
inline void save_image(const RenderedImage &img, const std::filesystem::path &path) { save_png(img.rgb, path); }

// ---------------------------------------------------------------------------
// Synthetic truth

inline void save_truth(const SyntheticTruth &t, const std::filesystem::path &dir) {
  nlohmann::json j;
  j["primitives"] = nlohmann::json::array();
  for (const auto &p : t.primitives)
    j["primitives"].push_back(primitive_to_json(p));
  j["points"] = "truth_points.ply";
  write_json(dir / "truth.json", j);
  export_points(t.points, t.labels, dir / "truth_points.ply");
}

/// Loads truth.json + truth_points.ply; returns false when the dataset has no truth.
inline bool load_truth(const std::filesystem::path &dir, SyntheticTruth &t) {
  if (!std::filesystem::exists(dir / "truth.json"))
    return false;
  const auto j = read_json(dir / "truth.json");
  try {
    t.primitives.clear();
    for (const auto &p : j.at("primitives"))
      t.primitives.push_back(primitive_from_json(p));
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed truth.json: " + std::string(e.what()));
  }
  t.points = import_points(dir / j.value("points", std::string("truth_points.ply")), &t.labels);
  return true;
}

} // namespace sqgs
