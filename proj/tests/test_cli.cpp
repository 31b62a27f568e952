#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace sqgs;
using namespace sqgs::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI from `cwd` with the given arguments.
Result run_cli(const std::string &args, const fs::path &cwd) {
  const fs::path so = cwd.parent_path() / (cwd.filename().string() + ".stdout");
  const fs::path se = cwd.parent_path() / (cwd.filename().string() + ".stderr");
  const std::string cmd = "cd \"" + cwd.string() + "\" && \"" SQGS_CLI_PATH "\" " + args + " > \"" + so.string() +
                          "\" 2> \"" + se.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  fs::remove(so);
  fs::remove(se);
  return r;
}

/// Path -> contents of every regular file below root.
std::map<std::string, std::string> snapshot(const fs::path &root) {
  std::map<std::string, std::string> m;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      m[fs::relative(e.path(), root).string()] = slurp(e.path());
  return m;
}

const char *kSpec = R"({"name": "sphere", "views": 6, "resolution": 24, "truth_points": 4000, "render_splats": 4000,
  "holdout": 3, "primitives": [{"kind": "sphere", "center": [0, 0, 0], "radius": 0.5, "color": [0.7, 0.4, 0.3]}]})";

const char *kConfig = "icosphere_level = 1\ngaussians_per_face = 2\nsh_degree = 1\nrays_per_view = 16\n"
                      "samples_per_ray = 16\noverlap_points = 128\nenter_points = 128\ninit_points = 2000\n";

/// Shared fixture data: one synthesized dataset and one short block fit.
class Cli : public ::testing::Test {
protected:
  static fs::path root, data, fit_out, scratch;

  static void SetUpTestSuite() {
    root = temp_dir("cli");
    scratch = root / "scratch";
    fs::create_directories(scratch);
    std::ofstream(root / "sphere.json") << kSpec;
    std::ofstream(root / "small.toml") << kConfig;
    data = root / "data";
    fit_out = root / "fit";
    ASSERT_EQ(run_cli("synth ../sphere.json -o ../data", scratch).code, 0);
    const Result r = run_cli("fit ../data -c ../small.toml -o ../fit --stage block --iters-block 10 --threads 1", scratch);
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

fs::path Cli::root, Cli::data, Cli::fit_out, Cli::scratch;

} // namespace

TEST_F(Cli, SynthWritesALoadableDataset) {
  const Dataset ds = load_dataset(data);
  EXPECT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds.test, (std::vector<int>{2, 5}));
  SyntheticTruth t;
  ASSERT_TRUE(load_truth(data, t));
  EXPECT_EQ(t.points.size(), 4000u);
}

TEST_F(Cli, SynthIsDeterministicUnderSeed) {
  ASSERT_EQ(run_cli("synth ../sphere.json -o ../s1 --seed 5", scratch).code, 0);
  ASSERT_EQ(run_cli("synth ../sphere.json -o ../s2 --seed 5", scratch).code, 0);
  ASSERT_EQ(run_cli("synth ../sphere.json -o ../s3 --seed 6", scratch).code, 0);
  EXPECT_EQ(snapshot(root / "s1"), snapshot(root / "s2"));
  EXPECT_NE(slurp(root / "s1" / "truth_points.ply"), slurp(root / "s3" / "truth_points.ply"));
}

TEST_F(Cli, SynthRejectsInvalidSpecWithoutOutput) {
  std::ofstream(root / "bad.json") << R"({"primitives": [{"kind": "torus", "center": [0, 0, 0]}]})";
  const Result r = run_cli("synth ../bad.json -o ../bad_out", scratch);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("torus"), std::string::npos);
  EXPECT_FALSE(fs::exists(root / "bad_out"));
}

TEST_F(Cli, FitWritesCheckpointObjsAndReport) {
  EXPECT_TRUE(fs::exists(fit_out / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(fit_out / "blocks" / "scene.json"));
  EXPECT_TRUE(fs::exists(fit_out / "splats.ply"));
  EXPECT_TRUE(fs::exists(fit_out / "config.toml"));
  const auto report = read_json(fit_out / "report.json");
  EXPECT_EQ(report.at("block").at("records").size(), 10u);
  EXPECT_FALSE(report.contains("point"));
  const Checkpoint c = load_checkpoint(fit_out / "checkpoint.json");
  int objs = 0;
  for (const auto &e : fs::directory_iterator(fit_out / "blocks"))
    objs += e.path().extension() == ".obj";
  EXPECT_EQ(objs, c.scene.alive_count());
}

TEST_F(Cli, FitWithMissingMasksFailsWithoutOutput) {
  fs::create_directories(root / "nomask");
  fs::copy(data / "cameras.json", root / "nomask" / "cameras.json");
  fs::copy(data / "images", root / "nomask" / "images");
  const Result r = run_cli("fit ../nomask -o ../nomask_out --iters-block 5", scratch);
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(root / "nomask_out"));
}

TEST_F(Cli, FitRejectsUnknownConfigKey) {
  std::ofstream(root / "typo.toml") << "lambda_cvo = 1.0\n";
  const Result r = run_cli("fit ../data -c ../typo.toml -o ../typo_out", scratch);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("lambda_cvo"), std::string::npos);
  EXPECT_FALSE(fs::exists(root / "typo_out"));
}

TEST_F(Cli, DumpConfigReproducesTheRun) {
  const std::string flags = "-c ../small.toml --stage block --iters-block 6 --seed 4 --threads 1";
  const Result dump = run_cli("fit ../data " + flags + " --dump-config", scratch);
  ASSERT_EQ(dump.code, 0);
  std::ofstream(root / "dumped.toml") << dump.out;
  EXPECT_EQ(run_cli("fit ../data -c ../dumped.toml --dump-config", scratch).out, dump.out);
  ASSERT_EQ(run_cli("fit ../data " + flags + " -o ../run_flags", scratch).code, 0);
  ASSERT_EQ(run_cli("fit ../data -c ../dumped.toml -o ../run_dumped", scratch).code, 0);
  const auto a = read_json(root / "run_flags" / "report.json")["block"]["records"];
  const auto b = read_json(root / "run_dumped" / "report.json")["block"]["records"];
  EXPECT_EQ(a, b);
}

TEST_F(Cli, CommandsWriteOnlyUnderTheirOutput) {
  const auto data_before = snapshot(data);
  const auto ckpt_before = snapshot(fit_out);
  ASSERT_EQ(run_cli("fit ../data -c ../small.toml -o ../confined --iters-block 4 --iters-point 2", scratch).code, 0);
  ASSERT_EQ(run_cli("eval ../fit/checkpoint.json ../data", scratch).code, 0);
  ASSERT_EQ(run_cli("render ../fit/checkpoint.json -o ../render_out/view.png --dataset ../data --view 1", scratch).code, 0);
  EXPECT_TRUE(fs::is_empty(scratch));
  EXPECT_EQ(snapshot(data), data_before);
  EXPECT_EQ(snapshot(fit_out), ckpt_before);
  EXPECT_EQ(snapshot(root / "render_out").size(), 1u);
  EXPECT_TRUE(read_json(root / "confined" / "report.json").contains("point"));
}

TEST_F(Cli, RenderMatchesTheStoredScene) {
  ASSERT_EQ(run_cli("render ../fit/checkpoint.json -o ../r/view2.png --dataset ../data --view 2", scratch).code, 0);
  const Checkpoint c = load_checkpoint(fit_out / "checkpoint.json");
  const Dataset ds = load_dataset(data);
  const Image want = render(attach_scene(c.scene), ds.cameras[2], c.config.optim.render).rgb;
  const Image got = load_png(root / "r" / "view2.png", 3);
  double worst = 0.0;
  for (std::size_t i = 0; i < got.data.size(); ++i)
    worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
  EXPECT_LE(worst, 1.0 / 255.0);
}

TEST_F(Cli, RenderSinglePart) {
  const Checkpoint c = load_checkpoint(fit_out / "checkpoint.json");
  const Dataset ds = load_dataset(data);
  ASSERT_EQ(run_cli("render ../fit/checkpoint.json -o ../r/part0.png --dataset ../data --view 0 --part 0", scratch).code, 0);
  const Image got = load_png(root / "r" / "part0.png", 3);
  const int first = c.scene.alive_indices().front();
  const Image only = render(attach_scene(c.scene, first), ds.cameras[0], c.config.optim.render).rgb;
  double worst = 0.0;
  for (std::size_t i = 0; i < got.data.size(); ++i)
    worst = std::max(worst, std::abs(got.data[i] - only.data[i]));
  EXPECT_LE(worst, 0.5 / 255.0);
  const std::string out_of_range = std::to_string(c.scene.alive_count());
  EXPECT_NE(run_cli("render ../fit/checkpoint.json -o ../r/bad.png --dataset ../data --part " + out_of_range, scratch).code, 0);
  EXPECT_FALSE(fs::exists(root / "r" / "bad.png"));
}

TEST_F(Cli, RenderFromCameraFile) {
  const Dataset ds = load_dataset(data);
  write_json(root / "cam.json", camera_to_json(ds.cameras[4]));
  ASSERT_EQ(run_cli("render ../fit/checkpoint.json -o ../r/cam.png --camera ../cam.json", scratch).code, 0);
  ASSERT_EQ(run_cli("render ../fit/checkpoint.json -o ../r/view4.png --dataset ../data --view 4", scratch).code, 0);
  EXPECT_EQ(slurp(root / "r" / "cam.png"), slurp(root / "r" / "view4.png"));
}

TEST_F(Cli, EvalPrintsMetricsJson) {
  const Result r = run_cli("eval ../fit/checkpoint.json ../data", scratch);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.contains("cd"));
  EXPECT_GT(j.at("psnr").get<double>(), 0.0);
  EXPECT_LE(j.at("ssim").get<double>(), 1.0);
  EXPECT_EQ(j.at("parts").get<int>(), load_checkpoint(fit_out / "checkpoint.json").scene.alive_count());
}

TEST_F(Cli, EvalOmitsChamferWithoutTruth) {
  fs::copy(data, root / "notruth", fs::copy_options::recursive);
  fs::remove(root / "notruth" / "truth.json");
  const Result r = run_cli("eval ../fit/checkpoint.json ../notruth", scratch);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(nlohmann::json::parse(r.out).contains("cd"));
}

TEST_F(Cli, MalformedCheckpointFails) {
  std::ofstream(root / "broken.json") << "{\"format\": \"sqgs-checkpoint\", \"version\": 1}";
  EXPECT_NE(run_cli("eval ../broken.json ../data", scratch).code, 0);
  EXPECT_NE(run_cli("render ../broken.json -o ../r/x.png --dataset ../data", scratch).code, 0);
  EXPECT_NE(run_cli("refine ../broken.json ../data -o ../broken_out", scratch).code, 0);
  EXPECT_FALSE(fs::exists(root / "broken_out"));
}

TEST_F(Cli, RefineRunsThePointStage) {
  const Result r = run_cli("refine ../fit/checkpoint.json ../data -o ../refined --iters-point 3 --threads 1", scratch);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "refined" / "report.json").at("point").at("records").size(), 3u);
  const Checkpoint c = load_checkpoint(root / "refined" / "checkpoint.json");
  EXPECT_TRUE(c.has_free);
  EXPECT_EQ(c.stage, "point");
  EXPECT_EQ(import_splats(root / "refined" / "splats.ply").size(), c.free.size());
}

TEST_F(Cli, UsageErrorsAreNonzero) {
  EXPECT_NE(run_cli("", scratch).code, 0);
  EXPECT_NE(run_cli("fit ../data --stage sideways -o ../x", scratch).code, 0);
  EXPECT_NE(run_cli("fit ../data --stage point -o ../point_only", scratch).code, 0);
  EXPECT_FALSE(fs::exists(root / "point_only"));
}
