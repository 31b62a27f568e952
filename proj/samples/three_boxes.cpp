// Decomposes the three-box scene into blocks, refines it, and writes the result.
//
//   example_three_boxes [out_dir] [iters_block] [iters_point]
#include <cstdlib>
#include <iostream>

#include <sqgs/sqgs.hpp>

using namespace sqgs;

int main(int argc, char **argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "three_boxes_out";
  OptimConfig cfg;
  cfg.iters_block = argc > 2 ? std::atoi(argv[2]) : 3000;
  cfg.iters_point = argc > 3 ? std::atoi(argv[3]) : 1000;
  cfg.add_iters = {cfg.iters_block / 6, cfg.iters_block / 3};

  auto [ds, truth] = make_synthetic(synthetic_spec_from_json(read_json(SQGS_SAMPLES_DIR "/three_boxes.json")));
  const auto hull = visual_hull_points(ds, cfg.init_points, mix_seed(cfg.seed, 3));
  HybridScene scene = init_scene(cfg, ds.bbox);
  const FitReport block = block_level_fit(scene, ds, cfg, hull);
  const double cd_block = chamfer(sample_representation(scene, 20000, 1), truth.points);
  std::cerr << "block stage: " << block.parts << " blocks, CD " << cd_block << ", " << block.seconds << " s\n";

  FreeSplats free = decouple(scene);
  const FitReport point = point_level_refine(free, scene, ds, cfg);
  const SplatSet splats = to_splat_set(free);
  const double cd_point = chamfer(sample_representation(splats, 20000, 1), truth.points);
  std::cerr << "point stage: CD " << cd_point << ", " << point.seconds << " s\n";

  std::filesystem::create_directories(out);
  export_blocks(scene, out / "blocks");
  export_splats(splats, out / "splats.ply");
  for (int p = 0; p < scene.alive_count(); ++p)
    save_image(render(attach_scene(scene, scene.alive_indices()[p]), ds.cameras[0]),
               out / ("part_" + std::to_string(p) + ".png"));
  save_image(render(splats, ds.cameras[0]), out / "refined.png");
  std::cout << nlohmann::json{{"parts", block.parts}, {"cd_block", cd_block}, {"cd_point", cd_point}}.dump() << "\n";
}
