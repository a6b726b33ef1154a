#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tdn/tensor.hpp"

namespace tdn {

// A decoded video held in memory: frames [L,3,H,W], float32, values in [0,1].
struct VideoSource {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  std::int64_t frame_elems() const { return static_cast<std::int64_t>(3) * height * width; }
  const float* frame_ptr(int t) const { return data.data() + t * frame_elems(); }
};

enum class SampleMode { Random, Center };

// Segment indices for one clip: center frame per segment plus the four
// neighbors at offsets {-2,-1,+1,+2}, clamped to [0, L-1].
struct SegmentSample {
  std::vector<int> centers;
  std::vector<std::array<int, 4>> neighbors;
  bool strictly_increasing = true;
};

// Segment s covers frames [floor(s*L/T), floor((s+1)*L/T)). Random mode draws
// uniformly inside each segment; Center takes the midpoint. `clip_offset` in
// [0,1) shifts the deterministic pick inside the segment (multi-clip eval);
// 0.5 is the center.
SegmentSample sample_segments(int frame_count, int t_segments, SampleMode mode,
                              std::mt19937_64* rng, double clip_offset = 0.5);

// D_k = neighbor_k - center for k in {-2,-1,+1,+2}, stacked on the channel
// axis in that order. center [3,H,W], neighbors [4,3,H,W] -> [12,H,W].
Tensor rgb_difference(const Tensor& center, const Tensor& neighbors);

// A batch of sampled clips ready for the model.
struct ClipBatch {
  Tensor center_frames;    // [B,T,3,H,W]
  Tensor neighbor_frames;  // [B,T,4,3,H,W]
  std::vector<int> labels;
  std::vector<std::vector<int>> sampled_indices;  // [B][T]
  bool strictly_increasing = true;

  int batch() const { return center_frames.dim(0); }
  int segments() const { return center_frames.dim(1); }
  int height() const { return center_frames.dim(3); }
  int width() const { return center_frames.dim(4); }
};

// Assembles a batch from videos. `frame_perm` (optional, per batch item)
// remaps frame indices before sampling; used by the frame-shuffle control.
ClipBatch make_clip_batch(const std::vector<const VideoSource*>& videos,
                          const std::vector<int>& labels, int t_segments, SampleMode mode,
                          std::mt19937_64* rng, double clip_offset = 0.5,
                          const std::vector<std::vector<int>>* frame_perms = nullptr);

// Clip file: magic "TDNC", u32 version, u16 T, u16 H, u16 W, u8 has_neighbors,
// u32 label, f32 little-endian payload [T,3,H,W], then [T,4,3,H,W] when
// has_neighbors = 1. A full video is stored as T = L with no neighbors.
struct ClipFile {
  std::uint16_t t = 0;
  std::uint16_t h = 0;
  std::uint16_t w = 0;
  bool has_neighbors = false;
  std::uint32_t label = 0;
  std::vector<float> frames;     // [T,3,H,W]
  std::vector<float> neighbors;  // [T,4,3,H,W] when present
};

void write_clip(const std::string& path, const ClipFile& clip);
ClipFile read_clip(const std::string& path);

VideoSource video_from_clip(const ClipFile& clip);

// Dataset directory: train/, val/, manifest.csv with rows `path,label,frames`.
struct DatasetEntry {
  std::string path;  // relative to the dataset root
  int label = 0;
  int frames = 0;
};

struct Dataset {
  std::string root;
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> val;
  int num_classes = 0;
};

Dataset load_dataset(const std::string& root);

// Loads every video of a split into memory (order follows `entries`).
std::vector<VideoSource> load_videos(const std::string& root,
                                     const std::vector<DatasetEntry>& entries);

}  // namespace tdn
