#pragma once

#include <string>
#include <vector>

#include "tdn/model.hpp"
#include "tdn/video.hpp"

namespace tdn {

// Per-frame class activation heatmaps in [0,1], max-normalized over the clip
// (all-zero when the target logit does not depend on the layer).
struct CamMap {
  int t = 0, h = 0, w = 0;
  std::vector<double> data;  // [T,H,W]
  int target_class = 0;
  std::string layer;

  double at(int ti, int y, int x) const {
    return data[(static_cast<std::size_t>(ti) * h + y) * w + x];
  }
};

// Grad-CAM: backward from the target-class consensus logit, channel weights
// are the spatial mean of the layer gradient, map = relu(sum_c w_c * A_c),
// bilinearly upsampled to frame size. The clip batch must hold one clip.
CamMap grad_cam(const TdnModel& model, const ClipBatch& clip, const std::string& layer,
                int target_class);

void write_pgm(const std::string& path, int h, int w, const double* values01);
// 0.5/0.5 blend of the frame with a red-blue heat ramp.
void write_ppm_overlay(const std::string& path, int h, int w, const double* frame_rgb,
                       const double* heat01);

// Writes cam_<clip>_<t>.pgm / .ppm for every frame of the map.
void write_cam_files(const std::string& out_dir, const std::string& clip_name, const CamMap& cam,
                     const ClipBatch& clip);

}  // namespace tdn
