#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "config.hpp"
#include "scene_io.hpp"

namespace sqgs {

inline constexpr const char *kCheckpointFormat = "sqgs-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// A resumable snapshot: configuration, block state and (after decoupling) free splats.
struct Checkpoint {
  std::string stage = "block"; // block | point
  int iteration = 0;
  RunConfig config;
  HybridScene scene;
  bool has_free = false;
  FreeSplats free;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint &c) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["stage"] = c.stage;
  j["iteration"] = c.iteration;
  j["config"] = dump_toml(c.config);
  const HybridSettings &hs = c.scene.settings;
  j["settings"] = {{"icosphere_level", hs.level},
                   {"gaussians_per_face", hs.gaussians_per_face},
                   {"c", hs.c},
                   {"sh_degree", hs.sh_degree}};
  const LossWeights &w = c.scene.weights;
  j["weights"] = {{"lambda_ssim", w.lambda_ssim}, {"lambda_cov", w.cov},     {"lambda_over", w.over},
                  {"lambda_par", w.par},          {"lambda_opa", w.opa},     {"lambda_enter", w.enter},
                  {"lambda_scale", w.scale},      {"lambda_mask", w.mask}};
  j["bbox"] = bbox_to_json(c.scene.bbox);
  j["blocks"] = nlohmann::json::array();
  for (const auto &b : c.scene.blocks) {
    std::vector<double> bary;
    bary.reserve(b.bary.size() * 3);
    for (const auto &t : b.bary)
      bary.insert(bary.end(), {t.a0, t.a1, t.a2});
    j["blocks"].push_back({{"id", b.id},
                           {"alive", b.alive},
                           {"params", std::vector<double>(b.params.begin(), b.params.end())},
                           {"sh", b.sh},
                           {"bary", bary}});
  }
  if (c.has_free) {
    nlohmann::json f;
    f["sh_degree"] = c.free.sh_degree;
    f["sh"] = c.free.sh;
    std::vector<double> flat;
    std::vector<int> ids;
    flat.reserve(c.free.size() * 22);
    for (const auto &s : c.free.splats) {
      flat.insert(flat.end(), s.params.begin(), s.params.end());
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k)
          flat.push_back(s.base_frame(r, k));
      flat.push_back(s.base_scale2);
      flat.push_back(s.base_scale3);
      ids.push_back(s.block_id);
    }
    f["record"] = "params[10], base_frame[9] row-major, base_scale2, base_scale3";
    f["splats"] = flat;
    f["block_ids"] = ids;
    j["free"] = f;
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json &j) {
  Checkpoint c;
  try {
    require(j.at("format").get<std::string>() == kCheckpointFormat, "not a checkpoint file");
    require(j.at("version").get<int>() == kCheckpointVersion, "unsupported checkpoint version");
    c.stage = j.at("stage").get<std::string>();
    require(c.stage == "block" || c.stage == "point", "checkpoint stage must be block or point");
    c.iteration = j.at("iteration").get<int>();
    apply_toml(c.config, j.at("config").get<std::string>());
    const auto &s = j.at("settings");
    HybridSettings hs;
    hs.level = s.at("icosphere_level").get<int>();
    hs.gaussians_per_face = s.at("gaussians_per_face").get<int>();
    hs.c = s.at("c").get<double>();
    hs.sh_degree = s.at("sh_degree").get<int>();
    require(hs.level >= 0 && hs.level <= 4, "checkpoint: bad icosphere level");
    c.scene = make_empty_scene(hs, bbox_from_json(j.at("bbox")));
    const auto &w = j.at("weights");
    LossWeights &lw = c.scene.weights;
    lw.lambda_ssim = w.at("lambda_ssim").get<double>();
    lw.cov = w.at("lambda_cov").get<double>();
    lw.over = w.at("lambda_over").get<double>();
    lw.par = w.at("lambda_par").get<double>();
    lw.opa = w.at("lambda_opa").get<double>();
    lw.enter = w.at("lambda_enter").get<double>();
    lw.scale = w.at("lambda_scale").get<double>();
    lw.mask = w.at("lambda_mask").get<double>();
    for (const auto &jb : j.at("blocks")) {
      Block b;
      b.id = jb.at("id").get<int>();
      require(b.id == static_cast<int>(c.scene.blocks.size()), "checkpoint: block ids must be consecutive");
      b.alive = jb.at("alive").get<bool>();
      const auto p = jb.at("params").get<std::vector<double>>();
      require(p.size() == param::kCount, "checkpoint: block params must hold 13 values");
      for (int i = 0; i < param::kCount; ++i) {
        require(std::isfinite(p[i]), "checkpoint: non-finite block parameter");
        b.params[i] = p[i];
      }
      b.sh = jb.at("sh").get<std::vector<double>>();
      require(b.sh.size() == c.scene.sh_per_block(), "checkpoint: block SH size does not match the settings");
      const auto bary = jb.at("bary").get<std::vector<double>>();
      require(bary.size() == c.scene.splats_per_block() * 3, "checkpoint: barycentric table has the wrong size");
      for (std::size_t k = 0; k < bary.size(); k += 3)
        b.bary.push_back({bary[k], bary[k + 1], bary[k + 2]});
      c.scene.blocks.push_back(std::move(b));
    }
    require(c.scene.alive_count() > 0, "checkpoint: no alive block");
    if (j.contains("free")) {
      const auto &f = j.at("free");
      c.has_free = true;
      c.free.sh_degree = f.at("sh_degree").get<int>();
      c.free.sh = f.at("sh").get<std::vector<double>>();
      const auto flat = f.at("splats").get<std::vector<double>>();
      const auto ids = f.at("block_ids").get<std::vector<int>>();
      constexpr std::size_t rec = free_param::kCount + 11;
      require(flat.size() == ids.size() * rec, "checkpoint: free splat table has the wrong size");
      require(c.free.sh.size() == ids.size() * c.free.k3(), "checkpoint: free splat SH has the wrong size");
      for (std::size_t i = 0; i < ids.size(); ++i) {
        FreeSplat s;
        const double *r = flat.data() + i * rec;
        for (int k = 0; k < free_param::kCount; ++k)
          s.params[k] = r[k];
        for (int a = 0; a < 3; ++a)
          for (int k = 0; k < 3; ++k)
            s.base_frame(a, k) = r[free_param::kCount + a * 3 + k];
        s.base_scale2 = r[free_param::kCount + 9];
        s.base_scale3 = r[free_param::kCount + 10];
        s.block_id = ids[i];
        c.free.splats.push_back(s);
      }
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error("malformed checkpoint: " + std::string(e.what()));
  }
  return c;
}

inline void save_checkpoint(const Checkpoint &c, const std::filesystem::path &path) {
  write_json(path, checkpoint_to_json(c), -1);
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path))
    throw Error("missing checkpoint " + path.string());
  return checkpoint_from_json(read_json(path));
}

} // namespace sqgs
