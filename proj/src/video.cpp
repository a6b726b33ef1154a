#include "tdn/video.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tdn/util.hpp"

namespace tdn {

namespace {
constexpr std::array<int, 4> kNeighborOffsets = {-2, -1, +1, +2};
}

SegmentSample sample_segments(int frame_count, int t_segments, SampleMode mode,
                              std::mt19937_64* rng, double clip_offset) {
  TDN_REQUIRE(frame_count >= 1, "sample_segments: video has ", frame_count, " frames");
  TDN_REQUIRE(t_segments >= 1, "sample_segments: T must be >= 1, got ", t_segments);
  TDN_REQUIRE(clip_offset >= 0.0 && clip_offset < 1.0, "sample_segments: clip offset ",
              clip_offset, " outside [0,1)");
  const std::int64_t L = frame_count;

  SegmentSample out;
  out.centers.resize(static_cast<std::size_t>(t_segments));
  out.neighbors.resize(static_cast<std::size_t>(t_segments));
  for (int s = 0; s < t_segments; ++s) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(s) * L / t_segments);
    const int hi = static_cast<int>(static_cast<std::int64_t>(s + 1) * L / t_segments);
    int center;
    if (hi <= lo) {
      // Degenerate segment (L < T): repeat the nearest frame.
      center = std::min(lo, frame_count - 1);
    } else if (mode == SampleMode::Random) {
      TDN_REQUIRE(rng != nullptr, "sample_segments: random mode requires an RNG");
      std::uniform_int_distribution<int> dist(lo, hi - 1);
      center = dist(*rng);
    } else {
      center = lo + static_cast<int>(clip_offset * (hi - lo));
      center = std::min(center, hi - 1);
    }
    out.centers[static_cast<std::size_t>(s)] = center;
    for (std::size_t k = 0; k < kNeighborOffsets.size(); ++k) {
      int idx = center + kNeighborOffsets[k];
      idx = std::clamp(idx, 0, frame_count - 1);
      out.neighbors[static_cast<std::size_t>(s)][k] = idx;
    }
    if (s > 0 && out.centers[static_cast<std::size_t>(s - 1)] >= center)
      out.strictly_increasing = false;
  }
  return out;
}

Tensor rgb_difference(const Tensor& center, const Tensor& neighbors) {
  TDN_REQUIRE(center.rank() == 3 && center.dim(0) == 3, "rgb_difference: center must be [3,H,W], got ",
              shape_str(center.shape()));
  TDN_REQUIRE(neighbors.rank() == 4 && neighbors.dim(0) == 4 && neighbors.dim(1) == 3,
              "rgb_difference: neighbors must be [4,3,H,W], got ", shape_str(neighbors.shape()));
  TDN_REQUIRE(neighbors.dim(2) == center.dim(1) && neighbors.dim(3) == center.dim(2),
              "rgb_difference: spatial mismatch ", shape_str(neighbors.shape()), " vs ",
              shape_str(center.shape()));
  const int h = center.dim(1), w = center.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(3) * h * w;
  const double* c = center.values().data();
  const double* n = neighbors.values().data();
  std::vector<double> out(static_cast<std::size_t>(4) * plane);
  for (int k = 0; k < 4; ++k)
    for (std::int64_t i = 0; i < plane; ++i)
      out[static_cast<std::size_t>(k * plane + i)] = n[k * plane + i] - c[i];
  return Tensor::from({12, h, w}, std::move(out));
}

ClipBatch make_clip_batch(const std::vector<const VideoSource*>& videos,
                          const std::vector<int>& labels, int t_segments, SampleMode mode,
                          std::mt19937_64* rng, double clip_offset,
                          const std::vector<std::vector<int>>* frame_perms) {
  TDN_REQUIRE(!videos.empty(), "make_clip_batch: empty batch");
  TDN_REQUIRE(videos.size() == labels.size(), "make_clip_batch: ", videos.size(), " videos vs ",
              labels.size(), " labels");
  const int B = static_cast<int>(videos.size());
  const int T = t_segments;
  const int H = videos[0]->height, W = videos[0]->width;
  for (const auto* v : videos)
    TDN_REQUIRE(v->height == H && v->width == W, "make_clip_batch: mixed frame extents");

  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  std::vector<double> centers(static_cast<std::size_t>(B) * T * plane);
  std::vector<double> neigh(static_cast<std::size_t>(B) * T * 4 * plane);

  ClipBatch batch;
  batch.labels = labels;
  batch.sampled_indices.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const VideoSource& v = *videos[static_cast<std::size_t>(b)];
    SegmentSample s = sample_segments(v.frames, T, mode, rng, clip_offset);
    if (!s.strictly_increasing) batch.strictly_increasing = false;
    auto remap = [&](int idx) {
      if (!frame_perms) return idx;
      const auto& p = (*frame_perms)[static_cast<std::size_t>(b)];
      return p.empty() ? idx : p[static_cast<std::size_t>(idx)];
    };
    batch.sampled_indices[static_cast<std::size_t>(b)] = s.centers;
    for (int t = 0; t < T; ++t) {
      const float* src = v.frame_ptr(remap(s.centers[static_cast<std::size_t>(t)]));
      double* dst = centers.data() + (static_cast<std::size_t>(b) * T + t) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i];
      for (int k = 0; k < 4; ++k) {
        const float* ns = v.frame_ptr(remap(s.neighbors[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]));
        double* nd = neigh.data() + ((static_cast<std::size_t>(b) * T + t) * 4 + k) * plane;
        for (std::int64_t i = 0; i < plane; ++i) nd[i] = ns[i];
      }
    }
  }
  batch.center_frames = Tensor::from({B, T, 3, H, W}, std::move(centers));
  batch.neighbor_frames = Tensor::from({B, T, 4, 3, H, W}, std::move(neigh));
  return batch;
}

namespace {
constexpr char kClipMagic[4] = {'T', 'D', 'N', 'C'};
constexpr std::uint32_t kClipVersion = 1;
}  // namespace

void write_clip(const std::string& path, const ClipFile& clip) {
  const std::int64_t plane = static_cast<std::int64_t>(3) * clip.h * clip.w;
  TDN_REQUIRE(static_cast<std::int64_t>(clip.frames.size()) == clip.t * plane,
              "write_clip: frame payload size ", clip.frames.size(), " does not match T*3*H*W");
  if (clip.has_neighbors)
    TDN_REQUIRE(static_cast<std::int64_t>(clip.neighbors.size()) == clip.t * 4 * plane,
                "write_clip: neighbor payload size ", clip.neighbors.size(),
                " does not match T*4*3*H*W");
  std::string out;
  out.append(kClipMagic, 4);
  put_u32(out, kClipVersion);
  put_u16(out, clip.t);
  put_u16(out, clip.h);
  put_u16(out, clip.w);
  put_u8(out, clip.has_neighbors ? 1 : 0);
  put_u32(out, clip.label);
  out.reserve(out.size() + 4 * (clip.frames.size() + clip.neighbors.size()));
  for (float v : clip.frames) put_f32(out, v);
  if (clip.has_neighbors)
    for (float v : clip.neighbors) put_f32(out, v);
  write_file(path, out);
}

ClipFile read_clip(const std::string& path) {
  const std::string buf = read_file(path);
  std::size_t pos = 0;
  char magic[4];
  get_bytes(buf, pos, magic, 4, "magic");
  TDN_REQUIRE(std::equal(magic, magic + 4, kClipMagic), "bad clip magic in ", path,
              " (expected TDNC)");
  const std::uint32_t version = get_u32(buf, pos, "version");
  TDN_REQUIRE(version == kClipVersion, "unsupported clip version ", version, " in ", path);
  ClipFile clip;
  clip.t = get_u16(buf, pos, "T");
  clip.h = get_u16(buf, pos, "H");
  clip.w = get_u16(buf, pos, "W");
  clip.has_neighbors = get_u8(buf, pos, "has_neighbors") != 0;
  clip.label = get_u32(buf, pos, "label");
  const std::int64_t plane = static_cast<std::int64_t>(3) * clip.h * clip.w;
  clip.frames.resize(static_cast<std::size_t>(clip.t * plane));
  for (auto& v : clip.frames) v = get_f32(buf, pos, "frame payload");
  if (clip.has_neighbors) {
    clip.neighbors.resize(static_cast<std::size_t>(clip.t * 4 * plane));
    for (auto& v : clip.neighbors) v = get_f32(buf, pos, "neighbor payload");
  }
  TDN_REQUIRE(pos == buf.size(), "trailing bytes in clip ", path, " at byte offset ", pos);
  return clip;
}

VideoSource video_from_clip(const ClipFile& clip) {
  VideoSource v;
  v.frames = clip.t;
  v.height = clip.h;
  v.width = clip.w;
  v.data = clip.frames;
  return v;
}

Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.root = root;
  const std::string manifest_path = root + "/manifest.csv";
  std::ifstream in(manifest_path);
  TDN_REQUIRE(in.good(), "cannot open dataset manifest: ", manifest_path);
  std::string line;
  std::getline(in, line);
  TDN_REQUIRE(line == "path,label,frames", "bad manifest header in ", manifest_path, ": ", line);
  int max_label = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    DatasetEntry e;
    std::string label_s, frames_s;
    TDN_REQUIRE(std::getline(ls, e.path, ',') && std::getline(ls, label_s, ',') &&
                    std::getline(ls, frames_s),
                "bad manifest row in ", manifest_path, ": ", line);
    e.label = std::stoi(label_s);
    e.frames = std::stoi(frames_s);
    max_label = std::max(max_label, e.label);
    if (e.path.rfind("train/", 0) == 0) {
      ds.train.push_back(e);
    } else if (e.path.rfind("val/", 0) == 0) {
      ds.val.push_back(e);
    } else {
      fail("manifest row outside train/ or val/: ", e.path);
    }
  }
  TDN_REQUIRE(max_label >= 0, "empty dataset manifest: ", manifest_path);
  ds.num_classes = max_label + 1;
  return ds;
}

std::vector<VideoSource> load_videos(const std::string& root,
                                     const std::vector<DatasetEntry>& entries) {
  std::vector<VideoSource> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    ClipFile clip = read_clip(root + "/" + e.path);
    TDN_REQUIRE(clip.t == e.frames, "clip ", e.path, " has ", clip.t, " frames, manifest says ",
                e.frames);
    TDN_REQUIRE(static_cast<int>(clip.label) == e.label, "clip ", e.path, " has label ",
                clip.label, ", manifest says ", e.label);
    out.push_back(video_from_clip(clip));
  }
  return out;
}

}  // namespace tdn
