#include "tdn/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"

namespace tdn {

CamMap grad_cam(const TdnModel& model, const ClipBatch& clip, const std::string& layer,
                int target_class) {
  TDN_REQUIRE(clip.batch() == 1, "grad_cam: expected a single clip, got batch of ", clip.batch());
  const auto& names = model.conv_layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    fail("'", layer, "' is not a convolutional layer of this model (valid: ", valid, ")");
  }
  TDN_REQUIRE(target_class >= 0 && target_class < model.spec().classes, "grad_cam: class ",
              target_class, " outside [0,", model.spec().classes, ")");

  TdnModel::ForwardRecord rec;
  Tensor logits = model.forward(clip, &rec);
  Tensor target = pick(logits, target_class);
  target.backward();

  const auto& acts = rec.conv_acts.at(layer);
  const int T = static_cast<int>(acts.size());
  const int C = acts[0].dim(1), h = acts[0].dim(2), w = acts[0].dim(3);
  const int H = clip.height(), W = clip.width();

  CamMap cam;
  cam.t = T;
  cam.h = H;
  cam.w = W;
  cam.layer = layer;
  cam.target_class = target_class;
  cam.data.assign(static_cast<std::size_t>(T) * H * W, 0.0);

  double clip_max = 0.0;
  std::vector<std::vector<double>> maps(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const Tensor& a = acts[static_cast<std::size_t>(t)];
    std::vector<double> map2d(static_cast<std::size_t>(h) * w, 0.0);
    if (a.has_grad()) {
      const double* av = a.values().data();
      const double* gv = a.grad().data();
      for (int c = 0; c < C; ++c) {
        const double* gc = gv + static_cast<std::size_t>(c) * h * w;
        double wc = 0.0;
        for (int i = 0; i < h * w; ++i) wc += gc[i];
        wc /= (static_cast<double>(h) * w);
        const double* ac = av + static_cast<std::size_t>(c) * h * w;
        for (int i = 0; i < h * w; ++i) map2d[static_cast<std::size_t>(i)] += wc * ac[i];
      }
      for (auto& v : map2d) v = std::max(0.0, v);
    }
    // Upsample to frame size off the tape.
    NoGradGuard no_grad;
    Tensor m = Tensor::from({1, 1, h, w}, std::move(map2d));
    Tensor up = bilinear_upsample(m, H, W);
    maps[static_cast<std::size_t>(t)].assign(up.values().begin(), up.values().end());
    for (double v : maps[static_cast<std::size_t>(t)]) clip_max = std::max(clip_max, v);
  }
  if (clip_max > 0.0) {
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < H * W; ++i)
        cam.data[static_cast<std::size_t>(t) * H * W + i] =
            maps[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] / clip_max;
  }
  return cam;
}

namespace {
unsigned char to_byte(double v01) {
  const double v = std::clamp(v01, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(v * 255.0));
}
}  // namespace

void write_pgm(const std::string& path, int h, int w, const double* values01) {
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int i = 0; i < h * w; ++i) out.push_back(static_cast<char>(to_byte(values01[i])));
  write_file(path, out);
}

void write_ppm_overlay(const std::string& path, int h, int w, const double* frame_rgb,
                       const double* heat01) {
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int i = 0; i < h * w; ++i) {
    const double heat = heat01[i];
    const double hr = heat, hg = 0.0, hb = 1.0 - heat;
    out.push_back(static_cast<char>(to_byte(0.5 * frame_rgb[i] + 0.5 * hr)));
    out.push_back(static_cast<char>(to_byte(0.5 * frame_rgb[h * w + i] + 0.5 * hg)));
    out.push_back(static_cast<char>(to_byte(0.5 * frame_rgb[2 * h * w + i] + 0.5 * hb)));
  }
  write_file(path, out);
}

void write_cam_files(const std::string& out_dir, const std::string& clip_name, const CamMap& cam,
                     const ClipBatch& clip) {
  std::filesystem::create_directories(out_dir);
  const int H = cam.h, W = cam.w;
  const double* centers = clip.center_frames.values().data();
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  for (int t = 0; t < cam.t; ++t) {
    const std::string base = out_dir + "/cam_" + clip_name + "_" + std::to_string(t);
    const double* heat = cam.data.data() + static_cast<std::size_t>(t) * H * W;
    write_pgm(base + ".pgm", H, W, heat);
    write_ppm_overlay(base + ".ppm", H, W, centers + static_cast<std::size_t>(t) * plane, heat);
  }
}

}  // namespace tdn
