#include "tdn/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "tdn/util.hpp"
#include "tdn/video.hpp"

namespace tdn {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;
}

std::vector<MotionKind> default_motion_table(int num_classes) {
  static const MotionKind all[] = {MotionKind::Right,    MotionKind::Left,     MotionKind::Down,
                                   MotionKind::Up,       MotionKind::OrbitCw,  MotionKind::OrbitCcw,
                                   MotionKind::OscillateH, MotionKind::OscillateV};
  TDN_REQUIRE(num_classes >= 1 && num_classes <= 8, "synthetic task supports 1..8 classes, got ",
              num_classes);
  return {all, all + num_classes};
}

const char* motion_name(MotionKind k) {
  switch (k) {
    case MotionKind::Right: return "right";
    case MotionKind::Left: return "left";
    case MotionKind::Down: return "down";
    case MotionKind::Up: return "up";
    case MotionKind::OrbitCw: return "orbit_cw";
    case MotionKind::OrbitCcw: return "orbit_ccw";
    case MotionKind::OscillateH: return "oscillate_h";
    case MotionKind::OscillateV: return "oscillate_v";
  }
  return "?";
}

bool in_sprite_box(int px, int py, const SpriteBox& box, int image_size) {
  const int dx = ((px - box.x) % image_size + image_size) % image_size;
  const int dy = ((py - box.y) % image_size + image_size) % image_size;
  return dx < box.w && dy < box.h;
}

namespace {

struct Texture {
  int size;
  std::vector<float> rgb;  // [3,size,size]
};

Texture random_texture(int size, double lo, double hi, std::mt19937_64& rng) {
  Texture t;
  t.size = size;
  t.rgb.resize(static_cast<std::size_t>(3) * size * size);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.rgb) v = static_cast<float>(dist(rng));
  return t;
}

// Pastes a texture at integer anchor (x,y), wrapping around the image.
void paste(std::vector<float>& frame, int image, const Texture& tex, int x, int y) {
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < tex.size; ++i) {
      const int py = ((y + i) % image + image) % image;
      for (int j = 0; j < tex.size; ++j) {
        const int px = ((x + j) % image + image) % image;
        frame[(static_cast<std::size_t>(c) * image + py) * image + px] =
            tex.rgb[(static_cast<std::size_t>(c) * tex.size + i) * tex.size + j];
      }
    }
}

struct MotionState {
  MotionKind kind;
  double sx = 0, sy = 0;      // start or anchor
  double cx = 0, cy = 0;      // orbit center
  double radius = 0, phase = 0, omega = 0;
  double amplitude = 0, period = 1;
  double magnitude = 0;
};

MotionState init_motion(MotionKind kind, int image, double magnitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> upos(0.0, static_cast<double>(image));
  std::uniform_real_distribution<double> uphase(0.0, kTwoPi);
  MotionState m;
  m.kind = kind;
  m.magnitude = magnitude;
  m.sx = upos(rng);
  m.sy = upos(rng);
  switch (kind) {
    case MotionKind::OrbitCw:
    case MotionKind::OrbitCcw: {
      std::uniform_real_distribution<double> urad(0.15 * image, 0.30 * image);
      m.cx = upos(rng);
      m.cy = upos(rng);
      m.radius = urad(rng);
      m.phase = uphase(rng);
      m.omega = magnitude / m.radius;
      if (kind == MotionKind::OrbitCcw) m.omega = -m.omega;
      break;
    }
    case MotionKind::OscillateH:
    case MotionKind::OscillateV: {
      std::uniform_real_distribution<double> uamp(0.20 * image, 0.32 * image);
      m.amplitude = uamp(rng);
      m.phase = uphase(rng);
      // Mean |speed| of A*sin(2*pi*t/P) is 4A/P; match the straight movers.
      m.period = std::max(4.0, 4.0 * m.amplitude / magnitude);
      break;
    }
    default:
      break;
  }
  return m;
}

void motion_pos(const MotionState& m, int t, double* x, double* y) {
  switch (m.kind) {
    case MotionKind::Right: *x = m.sx + m.magnitude * t; *y = m.sy; break;
    case MotionKind::Left:  *x = m.sx - m.magnitude * t; *y = m.sy; break;
    case MotionKind::Down:  *x = m.sx; *y = m.sy + m.magnitude * t; break;
    case MotionKind::Up:    *x = m.sx; *y = m.sy - m.magnitude * t; break;
    case MotionKind::OrbitCw:
    case MotionKind::OrbitCcw:
      *x = m.cx + m.radius * std::cos(m.phase + m.omega * t);
      *y = m.cy + m.radius * std::sin(m.phase + m.omega * t);
      break;
    case MotionKind::OscillateH:
      *x = m.sx + m.amplitude * std::sin(m.phase + kTwoPi * t / m.period);
      *y = m.sy;
      break;
    case MotionKind::OscillateV:
      *x = m.sx;
      *y = m.sy + m.amplitude * std::sin(m.phase + kTwoPi * t / m.period);
      break;
  }
}

struct GeneratedVideo {
  ClipFile clip;
  std::vector<SpriteBox> boxes;
};

GeneratedVideo generate_video(const SynthTaskSpec& spec, const std::vector<MotionKind>& programs,
                              int video_index, int label, int frames) {
  const int S = spec.image_size;
  const int P = spec.sprite_size;
  std::mt19937_64 rng(spec.seed ^ static_cast<std::uint64_t>(video_index));

  // Static layer: background plus distractor patches, identical in every
  // frame so frame differences cancel it exactly.
  std::vector<float> base(static_cast<std::size_t>(3) * S * S);
  {
    std::uniform_real_distribution<double> ubg(0.0, 0.5);
    for (auto& v : base) v = static_cast<float>(ubg(rng));
  }
  std::uniform_int_distribution<int> upos_i(0, S - 1);
  for (int d = 0; d < spec.distractors; ++d) {
    Texture tex = random_texture(P, 0.4, 1.0, rng);
    const int dx = upos_i(rng), dy = upos_i(rng);
    paste(base, S, tex, dx, dy);
  }

  Texture sprite = random_texture(P, 0.4, 1.0, rng);
  MotionState motion = init_motion(programs[static_cast<std::size_t>(label)], S, spec.magnitude, rng);

  GeneratedVideo out;
  out.clip.t = static_cast<std::uint16_t>(frames);
  out.clip.h = static_cast<std::uint16_t>(S);
  out.clip.w = static_cast<std::uint16_t>(S);
  out.clip.has_neighbors = false;
  out.clip.label = static_cast<std::uint32_t>(label);
  out.clip.frames.resize(static_cast<std::size_t>(frames) * 3 * S * S);
  out.boxes.resize(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    double fx = 0, fy = 0;
    motion_pos(motion, t, &fx, &fy);
    const int ax = static_cast<int>(std::lround(fx)) % S;
    const int ay = static_cast<int>(std::lround(fy)) % S;
    std::vector<float> frame = base;
    paste(frame, S, sprite, ax, ay);
    std::copy(frame.begin(), frame.end(),
              out.clip.frames.begin() + static_cast<std::size_t>(t) * 3 * S * S);
    out.boxes[static_cast<std::size_t>(t)] = {((ax % S) + S) % S, ((ay % S) + S) % S, P, P};
  }
  return out;
}

std::string video_name(int index) {
  std::ostringstream os;
  os << "v";
  std::string n = std::to_string(index);
  os << std::string(5 - std::min<std::size_t>(5, n.size()), '0') << n;
  return os.str() + ".clip";
}

}  // namespace

void generate_synth_dataset(const SynthTaskSpec& spec, int n_train, int n_val,
                            int frames_per_video, const std::string& out_dir, int threads) {
  TDN_REQUIRE(spec.image_size >= 4, "image size too small: ", spec.image_size);
  TDN_REQUIRE(spec.sprite_size <= spec.image_size, "sprite size ", spec.sprite_size,
              " exceeds image size ", spec.image_size);
  TDN_REQUIRE(spec.sprite_size >= 1, "sprite size must be >= 1");
  TDN_REQUIRE(frames_per_video >= 1, "frames per video must be >= 1");
  const std::vector<MotionKind> programs =
      spec.programs.empty() ? default_motion_table(spec.num_classes) : spec.programs;
  TDN_REQUIRE(static_cast<int>(programs.size()) == spec.num_classes,
              "motion table size ", programs.size(), " does not match num_classes ",
              spec.num_classes);
  TDN_REQUIRE(n_train >= 1 && n_train % spec.num_classes == 0, "train count ", n_train,
              " must be a positive multiple of ", spec.num_classes, " for exact class balance");
  TDN_REQUIRE(n_val >= 1 && n_val % spec.num_classes == 0, "val count ", n_val,
              " must be a positive multiple of ", spec.num_classes, " for exact class balance");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "val");

  const int total = n_train + n_val;
  struct Row {
    std::string path;
    int label;
    std::vector<SpriteBox> boxes;
  };
  std::vector<Row> rows(static_cast<std::size_t>(total));

  auto work = [&](int begin, int end) {
    for (int v = begin; v < end; ++v) {
      const bool is_train = v < n_train;
      const int local = is_train ? v : v - n_train;
      const int label = local % spec.num_classes;
      GeneratedVideo gen = generate_video(spec, programs, v, label, frames_per_video);
      const std::string rel =
          std::string(is_train ? "train/" : "val/") + video_name(local);
      write_clip(out_dir + "/" + rel, gen.clip);
      rows[static_cast<std::size_t>(v)] = {rel, label, std::move(gen.boxes)};
    }
  };

  threads = std::max(1, threads);
  if (threads == 1) {
    work(0, total);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int b = t * chunk;
      const int e = std::min(total, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::ofstream manifest(out_dir + "/manifest.csv", std::ios::trunc);
  TDN_REQUIRE(manifest.good(), "cannot write manifest in ", out_dir);
  manifest << "path,label,frames\n";
  for (const auto& r : rows) manifest << r.path << "," << r.label << "," << frames_per_video << "\n";

  std::ofstream boxes(out_dir + "/boxes.csv", std::ios::trunc);
  TDN_REQUIRE(boxes.good(), "cannot write boxes.csv in ", out_dir);
  boxes << "path,frame,x,y,w,h\n";
  for (const auto& r : rows)
    for (std::size_t t = 0; t < r.boxes.size(); ++t) {
      const SpriteBox& b = r.boxes[t];
      boxes << r.path << "," << t << "," << b.x << "," << b.y << "," << b.w << "," << b.h << "\n";
    }
}

std::map<std::string, std::vector<SpriteBox>> load_boxes(const std::string& dataset_root) {
  const std::string path = dataset_root + "/boxes.csv";
  std::ifstream in(path);
  TDN_REQUIRE(in.good(), "cannot open ", path);
  std::string line;
  std::getline(in, line);
  TDN_REQUIRE(line == "path,frame,x,y,w,h", "bad boxes.csv header: ", line);
  std::map<std::string, std::vector<SpriteBox>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string p, f, x, y, w, h;
    TDN_REQUIRE(std::getline(ls, p, ',') && std::getline(ls, f, ',') && std::getline(ls, x, ',') &&
                    std::getline(ls, y, ',') && std::getline(ls, w, ',') && std::getline(ls, h),
                "bad boxes.csv row: ", line);
    auto& vec = out[p];
    const std::size_t frame = static_cast<std::size_t>(std::stoi(f));
    if (vec.size() <= frame) vec.resize(frame + 1);
    vec[frame] = {std::stoi(x), std::stoi(y), std::stoi(w), std::stoi(h)};
  }
  return out;
}

}  // namespace tdn
