#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tdn {

// Motion programs for the synthetic task. Sprite appearance, start position,
// and background are resampled per video, so a single frame carries no label
// signal; only the motion pattern does.
enum class MotionKind {
  Right,
  Left,
  Down,
  Up,
  OrbitCw,
  OrbitCcw,
  OscillateH,
  OscillateV,
};

struct SynthTaskSpec {
  int num_classes = 8;
  int image_size = 32;
  int sprite_size = 8;
  int distractors = 2;        // static sprite-like patches per video
  double magnitude = 2.0;     // pixels per frame along the motion path
  std::uint64_t seed = 1;     // texture / motion RNG seed
  std::vector<MotionKind> programs;  // filled from num_classes when empty
};

std::vector<MotionKind> default_motion_table(int num_classes);
const char* motion_name(MotionKind k);

// Axis-aligned sprite box with toroidal membership: the sprite is rendered
// modulo the image, so a box may wrap around either edge.
struct SpriteBox {
  int x = 0, y = 0, w = 0, h = 0;
};

bool in_sprite_box(int px, int py, const SpriteBox& box, int image_size);

// Writes `n_train` + `n_val` videos (balanced over classes; both counts must
// be divisible by num_classes) of `frames_per_video` frames each, as TDNC
// clip files under train/ and val/, plus manifest.csv and boxes.csv (the
// moving sprite's per-frame box, used by the localization checks).
// Video v uses the RNG stream seeded with spec.seed ^ v, so generation is
// deterministic for any thread count.
void generate_synth_dataset(const SynthTaskSpec& spec, int n_train, int n_val,
                            int frames_per_video, const std::string& out_dir, int threads = 1);

// boxes.csv rows keyed by clip path (relative to the dataset root), one box
// per frame.
std::map<std::string, std::vector<SpriteBox>> load_boxes(const std::string& dataset_root);

}  // namespace tdn
