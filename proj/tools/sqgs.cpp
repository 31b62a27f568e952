// Command-line front end: fit, refine, render, eval, synth.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include <sqgs/sqgs.hpp>

namespace fs = std::filesystem;
using namespace sqgs;

namespace {

/// Flags shared by the optimizing commands; unset flags keep the config value.
struct Overrides {
  std::string config_path;
  std::optional<std::string> stage;
  std::optional<int> iters_block, iters_point, threads;
  std::optional<std::uint64_t> seed;
  bool dump = false;

  void add_to(CLI::App *cmd, bool with_stage) {
    cmd->add_option("-c,--config", config_path, "Flat TOML config")->check(CLI::ExistingFile);
    if (with_stage)
      cmd->add_option("--stage", stage, "block, point or both")->check(CLI::IsMember({"block", "point", "both"}));
    cmd->add_option("--iters-block", iters_block, "Block-level iterations")->check(CLI::NonNegativeNumber);
    cmd->add_option("--iters-point", iters_point, "Point-level iterations")->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--threads", threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--dump-config", dump, "Print the effective config as TOML and exit");
  }

  /// Applies the config file, then the flags.
  void apply(RunConfig &rc) const {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      apply_toml(rc, ss.str());
    }
    if (stage)
      rc.stage = *stage;
    if (iters_block && *iters_block != rc.optim.iters_block) {
      // Add events keep their relative position in the budget.
      std::vector<int> scaled;
      for (int a : rc.optim.add_iters) {
        const int s = static_cast<int>(static_cast<long long>(a) * *iters_block / std::max(1, rc.optim.iters_block));
        if (s < *iters_block && std::find(scaled.begin(), scaled.end(), s) == scaled.end())
          scaled.push_back(s);
      }
      rc.optim.add_iters = scaled;
      rc.optim.iters_block = *iters_block;
    }
    if (iters_point)
      rc.optim.iters_point = *iters_point;
    if (seed)
      rc.optim.seed = *seed;
    if (threads)
      rc.threads = *threads;
    validate_run_config(rc);
  }
};

void set_threads(int n) {
  if (n > 0)
    omp_set_num_threads(n);
}

void progress(const std::string &msg) { std::cerr << msg << std::endl; }

void write_text(const fs::path &p, const std::string &text) {
  std::ofstream out(p);
  if (!out)
    throw Error("cannot write " + p.string());
  out << text;
}

Checkpoint make_checkpoint(const std::string &stage, int iter, const RunConfig &rc, const HybridScene &scene,
                           const FreeSplats *free = nullptr) {
  Checkpoint c;
  c.stage = stage;
  c.iteration = iter;
  c.config = rc;
  c.scene = scene;
  if (free) {
    c.has_free = true;
    c.free = *free;
  }
  return c;
}

/// Decouple + point-level stage; writes the point checkpoint and splats.
FitReport run_point_stage(const HybridScene &scene, const Dataset &ds, const RunConfig &rc, const fs::path &out) {
  FreeSplats free = decouple(scene);
  progress("point stage: " + std::to_string(free.size()) + " splats, " + std::to_string(rc.optim.iters_point) +
           " iterations");
  fs::create_directories(out / "checkpoints");
  const FitReport rep = point_level_refine(free, scene, ds, rc.optim, [&](int it, const FreeSplats &f) {
    progress("point iter " + std::to_string(it) + "/" + std::to_string(rc.optim.iters_point));
    save_checkpoint(make_checkpoint("point", it, rc, scene, &f), out / "checkpoints" / ("point_" + std::to_string(it) + ".json"));
  });
  save_checkpoint(make_checkpoint("point", rc.optim.iters_point, rc, scene, &free), out / "checkpoint.json");
  export_splats(to_splat_set(free), out / "splats.ply");
  return rep;
}

int cmd_fit(const std::string &data_dir, const fs::path &out, const Overrides &ov) {
  RunConfig rc;
  ov.apply(rc);
  if (ov.dump) {
    std::cout << dump_toml(rc);
    return 0;
  }
  if (rc.stage == "point")
    throw Error("fit: stage 'point' needs a block-level checkpoint; use `sqgs refine`");
  set_threads(rc.threads);
  // Everything is loaded before the first write so a bad input leaves no partial output.
  const Dataset ds = load_dataset(data_dir);
  progress("loaded " + std::to_string(ds.size()) + " views from " + data_dir);

  fs::create_directories(out / "checkpoints");
  write_text(out / "config.toml", dump_toml(rc));
  const OptimConfig &cfg = rc.optim;
  const auto hull = visual_hull_points(ds, cfg.init_points, mix_seed(cfg.seed, 3));
  HybridScene scene = init_scene(cfg, ds.bbox);
  progress("block stage: " + std::to_string(cfg.m_init) + " blocks, " + std::to_string(cfg.iters_block) + " iterations");
  nlohmann::json report;
  const FitReport block = block_level_fit(scene, ds, cfg, hull, [&](int it, const HybridScene &s) {
    progress("block iter " + std::to_string(it) + "/" + std::to_string(cfg.iters_block) + ", " +
             std::to_string(s.alive_count()) + " blocks");
    save_checkpoint(make_checkpoint("block", it, rc, s), out / "checkpoints" / ("block_" + std::to_string(it) + ".json"));
  });
  report["block"] = block.to_json();
  save_checkpoint(make_checkpoint("block", cfg.iters_block, rc, scene), out / "checkpoint.json");
  export_blocks(scene, out / "blocks");
  export_splats(attach_scene(scene), out / "splats.ply");
  if (rc.stage == "both")
    report["point"] = run_point_stage(scene, ds, rc, out).to_json();
  write_json(out / "report.json", report);
  std::cout << nlohmann::json{{"parts", block.parts},
                              {"block_seconds", block.seconds},
                              {"out", out.string()}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_refine(const fs::path &ckpt_path, const std::string &data_dir, const fs::path &out, const Overrides &ov) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig rc = ckpt.config;
  ov.apply(rc);
  if (ov.dump) {
    std::cout << dump_toml(rc);
    return 0;
  }
  set_threads(rc.threads);
  const Dataset ds = load_dataset(data_dir);
  HybridScene scene = ckpt.scene;
  scene.weights = rc.optim.weights;
  require(scene.alive_count() > 0, "refine: checkpoint has no alive block");

  fs::create_directories(out);
  write_text(out / "config.toml", dump_toml(rc));
  const FitReport rep = run_point_stage(scene, ds, rc, out);
  write_json(out / "report.json", nlohmann::json{{"point", rep.to_json()}});
  std::cout << nlohmann::json{{"splats", scene.alive_count() * scene.splats_per_block()},
                              {"point_seconds", rep.seconds},
                              {"out", out.string()}}
                   .dump()
            << std::endl;
  return 0;
}

/// Splats stored in a checkpoint, optionally restricted to the part-th alive block.
SplatSet checkpoint_splats(const Checkpoint &c, std::optional<int> part) {
  const auto alive = c.scene.alive_indices();
  int only = -1;
  if (part) {
    if (*part < 0 || *part >= static_cast<int>(alive.size()))
      throw Error("part " + std::to_string(*part) + " out of range: scene has " + std::to_string(alive.size()) +
                  " blocks");
    only = alive[*part];
  }
  if (!c.has_free)
    return attach_scene(c.scene, only);
  SplatSet all = to_splat_set(c.free);
  if (only < 0)
    return all;
  SplatSet out;
  out.sh_degree = all.sh_degree;
  const std::size_t k3 = static_cast<std::size_t>(all.coeffs()) * 3;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.splats[i].block_id == c.scene.blocks[only].id) {
      out.splats.push_back(all.splats[i]);
      out.sh.insert(out.sh.end(), all.sh.begin() + i * k3, all.sh.begin() + (i + 1) * k3);
      out.face.push_back(-1);
    }
  return out;
}

int cmd_render(const fs::path &ckpt_path, const fs::path &out_png, const std::string &data_dir, int view,
               const std::string &camera_path, std::optional<int> part, int threads) {
  set_threads(threads);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  Camera cam;
  if (!camera_path.empty()) {
    try {
      cam = camera_from_json(read_json(camera_path));
    } catch (const nlohmann::json::exception &e) {
      throw Error("malformed camera " + camera_path + ": " + e.what());
    }
  } else {
    const Dataset ds = load_dataset(data_dir);
    if (view < 0 || static_cast<std::size_t>(view) >= ds.size())
      throw Error("view " + std::to_string(view) + " out of range");
    cam = ds.cameras[view];
  }
  const SplatSet splats = checkpoint_splats(ckpt, part);
  const RenderedImage img = render(splats, cam, ckpt.config.optim.render);
  if (out_png.has_parent_path())
    fs::create_directories(out_png.parent_path());
  save_image(img, out_png);
  std::cout << nlohmann::json{{"splats", splats.size()}, {"out", out_png.string()}}.dump() << std::endl;
  return 0;
}

int cmd_eval(const fs::path &ckpt_path, const std::string &data_dir, int samples, int threads) {
  set_threads(threads);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_dir);
  SyntheticTruth truth;
  const bool has_truth = load_truth(data_dir, truth);
  const SplatSet splats = checkpoint_splats(ckpt, std::nullopt);
  std::vector<int> views = ds.test;
  if (views.empty())
    views = ds.train_views();
  MetricsReport m;
  std::tie(m.psnr, m.ssim) = image_metrics(splats, ds, views, ckpt.config.optim.render);
  m.parts = ckpt.scene.alive_count();
  if (has_truth) {
    const auto pts = ckpt.has_free ? sample_representation(splats, samples, ckpt.config.optim.seed)
                                   : sample_representation(ckpt.scene, samples, ckpt.config.optim.seed);
    m.cd = chamfer(pts, truth.points);
  }
  progress("evaluated " + std::to_string(views.size()) + (ds.test.empty() ? " training" : " held-out") + " views");
  std::cout << m.to_json().dump() << std::endl;
  return 0;
}

int cmd_synth(const fs::path &spec_path, const fs::path &out, std::optional<std::uint64_t> seed) {
  SyntheticSpec spec = synthetic_spec_from_json(read_json(spec_path));
  if (seed)
    spec.seed = *seed;
  auto [ds, truth] = make_synthetic(spec);
  save_dataset(ds, out);
  save_truth(truth, out);
  write_json(out / "spec.json", synthetic_spec_to_json(spec));
  std::cout << nlohmann::json{{"views", ds.size()}, {"truth_points", truth.points.size()}, {"out", out.string()}}.dump()
            << std::endl;
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Superquadric block reconstruction from calibrated multi-view images"};
  app.require_subcommand(1);

  std::string data_dir, out_dir, ckpt, camera_path, spec_path, out_png;
  int view = 0, threads = 0, samples = 20000;
  std::optional<int> part;
  std::optional<std::uint64_t> synth_seed;

  Overrides fit_ov;
  auto *fit = app.add_subcommand("fit", "Block-level fit, then optionally point-level refinement");
  fit->add_option("dataset", data_dir, "Dataset directory")->required();
  fit->add_option("-o,--out", out_dir, "Output directory");
  fit_ov.add_to(fit, true);

  Overrides ref_ov;
  auto *refine = app.add_subcommand("refine", "Point-level refinement of a block checkpoint");
  refine->add_option("checkpoint", ckpt, "Block-level checkpoint")->required();
  refine->add_option("dataset", data_dir, "Dataset directory")->required();
  refine->add_option("-o,--out", out_dir, "Output directory");
  ref_ov.add_to(refine, false);

  auto *rend = app.add_subcommand("render", "Render a checkpoint");
  rend->add_option("checkpoint", ckpt, "Checkpoint")->required();
  rend->add_option("-o,--out", out_png, "Output PNG")->required();
  auto *ds_opt = rend->add_option("--dataset", data_dir, "Dataset whose camera to use");
  rend->add_option("--view", view, "View index in the dataset")->needs(ds_opt);
  auto *cam_opt = rend->add_option("--camera", camera_path, "Camera JSON")->check(CLI::ExistingFile);
  ds_opt->excludes(cam_opt);
  rend->add_option("--part", part, "Render only the i-th surviving block");
  rend->add_option("--threads", threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);

  auto *eval = app.add_subcommand("eval", "Print metrics of a checkpoint as JSON");
  eval->add_option("checkpoint", ckpt, "Checkpoint")->required();
  eval->add_option("dataset", data_dir, "Dataset directory")->required();
  eval->add_option("--samples", samples, "Geometry samples for Chamfer distance")->check(CLI::PositiveNumber);
  eval->add_option("--threads", threads, "Worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);

  auto *synth = app.add_subcommand("synth", "Materialize a synthetic dataset from a primitive spec");
  synth->add_option("spec", spec_path, "Spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  CLI11_PARSE(app, argc, argv);

  try {
    const bool dumping = (fit->parsed() && fit_ov.dump) || (refine->parsed() && ref_ov.dump);
    if ((fit->parsed() || refine->parsed()) && !dumping && out_dir.empty())
      throw Error("--out is required");
    if (fit->parsed())
      return cmd_fit(data_dir, out_dir, fit_ov);
    if (refine->parsed())
      return cmd_refine(ckpt, data_dir, out_dir, ref_ov);
    if (rend->parsed()) {
      if (data_dir.empty() && camera_path.empty())
        throw Error("render needs --dataset (with --view) or --camera");
      return cmd_render(ckpt, out_png, data_dir, view, camera_path, part, threads);
    }
    if (eval->parsed())
      return cmd_eval(ckpt, data_dir, samples, threads);
    if (synth->parsed())
      return cmd_synth(spec_path, out_dir, synth_seed);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
