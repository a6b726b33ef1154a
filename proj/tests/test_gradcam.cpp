#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "tdn/gradcam.hpp"
#include "tdn/model.hpp"
#include "tdn/util.hpp"
#include "test_support.hpp"

using namespace tdn;

namespace {

ModelSpec tiny_spec() { return parse_model_spec_file(std::string(TDN_SPEC_DIR) + "/tiny.spec"); }

ClipBatch one_clip(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const int T = spec.segments, H = spec.input_size, W = spec.input_size;
  std::vector<double> centers(static_cast<std::size_t>(T) * 3 * H * W);
  std::vector<double> neighbors(static_cast<std::size_t>(T) * 4 * 3 * H * W);
  for (auto& v : centers) v = dist(rng);
  for (auto& v : neighbors) v = dist(rng);
  ClipBatch cb;
  cb.center_frames = Tensor::from({1, T, 3, H, W}, std::move(centers));
  cb.neighbor_frames = Tensor::from({1, T, 4, 3, H, W}, std::move(neighbors));
  cb.labels = {0};
  return cb;
}

}  // namespace

TEST_CASE("grad_cam: map is normalized to max 1 and bounded in [0,1]") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 3);
  ClipBatch clip = one_clip(spec, 10);
  CamMap cam = grad_cam(model, clip, model.default_cam_layer(), 2);
  REQUIRE(cam.t == spec.segments);
  REQUIRE(cam.h == spec.input_size);
  double mx = 0;
  for (double v : cam.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    mx = std::max(mx, v);
  }
  CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("grad_cam: a zeroed classifier yields an all-zero map") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 4);
  for (auto& v : model.params().get("head.fc.weight").values_mut()) v = 0.0;
  for (auto& v : model.params().get("head.fc.bias").values_mut()) v = 0.0;
  ClipBatch clip = one_clip(spec, 11);
  CamMap cam = grad_cam(model, clip, model.default_cam_layer(), 1);
  for (double v : cam.data) CHECK(v == 0.0);
}

TEST_CASE("grad_cam: non-conv layer names are rejected with the valid list") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 5);
  ClipBatch clip = one_clip(spec, 12);
  try {
    grad_cam(model, clip, "head.fc", 0);
    CHECK(false);
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("not a convolutional layer") != std::string::npos);
    CHECK(msg.find("stage1.conv") != std::string::npos);
  }
  CHECK_THROWS_AS(grad_cam(model, clip, model.default_cam_layer(), 99), Error);
}

TEST_CASE("grad_cam files: pgm/ppm headers and payload sizes") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 6);
  ClipBatch clip = one_clip(spec, 13);
  CamMap cam = grad_cam(model, clip, "stage3.block0.conv", clip.labels[0]);
  auto dir = std::filesystem::temp_directory_path() / "tdn_cam_test";
  std::filesystem::remove_all(dir);
  write_cam_files(dir.string(), "clip0", cam, clip);
  const std::string pgm = read_file((dir / "cam_clip0_0.pgm").string());
  CHECK(pgm.rfind("P5\n32 32\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n32 32\n255\n").size() + 32 * 32);
  const std::string ppm = read_file((dir / "cam_clip0_0.ppm").string());
  CHECK(ppm.rfind("P6\n32 32\n255\n", 0) == 0);
  CHECK(ppm.size() == std::string("P6\n32 32\n255\n").size() + 3 * 32 * 32);
  for (int t = 0; t < spec.segments; ++t)
    CHECK(std::filesystem::exists(dir / ("cam_clip0_" + std::to_string(t) + ".ppm")));
  std::filesystem::remove_all(dir);
}
