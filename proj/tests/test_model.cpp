#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "tdn/model.hpp"
#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"
#include "test_support.hpp"

using namespace tdn;
using testsup::max_abs_diff;

namespace {

ModelSpec tiny_spec() { return parse_model_spec_file(std::string(TDN_SPEC_DIR) + "/tiny.spec"); }

ClipBatch random_clip_batch(const ModelSpec& spec, int b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const int T = spec.segments, H = spec.input_size, W = spec.input_size;
  std::vector<double> centers(static_cast<std::size_t>(b) * T * 3 * H * W);
  std::vector<double> neighbors(static_cast<std::size_t>(b) * T * 4 * 3 * H * W);
  for (auto& v : centers) v = dist(rng);
  for (auto& v : neighbors) v = dist(rng);
  ClipBatch cb;
  cb.center_frames = Tensor::from({b, T, 3, H, W}, std::move(centers));
  cb.neighbor_frames = Tensor::from({b, T, 4, 3, H, W}, std::move(neighbors));
  cb.labels.assign(static_cast<std::size_t>(b), 0);
  return cb;
}

ClipBatch permute_segments(const ClipBatch& in, const std::vector<int>& perm) {
  const int B = in.batch(), T = in.segments(), H = in.height(), W = in.width();
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  std::vector<double> centers(in.center_frames.values().begin(), in.center_frames.values().end());
  std::vector<double> neighbors(in.neighbor_frames.values().begin(),
                                in.neighbor_frames.values().end());
  std::vector<double> c2(centers.size()), n2(neighbors.size());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const int src = perm[static_cast<std::size_t>(t)];
      std::copy_n(centers.data() + (static_cast<std::size_t>(b) * T + src) * plane, plane,
                  c2.data() + (static_cast<std::size_t>(b) * T + t) * plane);
      std::copy_n(neighbors.data() + (static_cast<std::size_t>(b) * T + src) * 4 * plane,
                  4 * plane, n2.data() + (static_cast<std::size_t>(b) * T + t) * 4 * plane);
    }
  ClipBatch out;
  out.center_frames = Tensor::from({B, T, 3, H, W}, std::move(c2));
  out.neighbor_frames = Tensor::from({B, T, 4, 3, H, W}, std::move(n2));
  out.labels = in.labels;
  return out;
}

// Independent plain-CNN forward for a placements-none tiny spec, built only
// from the naive oracle kernels and the model's weights.
std::vector<double> plain_cnn_logits(const TdnModel& model, const ClipBatch& batch) {
  const ModelSpec& spec = model.spec();
  const ParamStore& params = model.params();
  const int B = batch.batch(), T = batch.segments(), H = batch.height(), W = batch.width();
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  std::vector<double> logits(static_cast<std::size_t>(B) * spec.classes, 0.0);

  auto grid_of = [](const Tensor& t) {
    oracle::Grid4 g;
    g.n = t.dim(0);
    g.c = t.dim(1);
    g.h = t.dim(2);
    g.w = t.dim(3);
    g.v.assign(t.values().begin(), t.values().end());
    return g;
  };

  for (int t = 0; t < T; ++t) {
    oracle::Grid4 x = oracle::make_grid(B, 3, H, W);
    for (int b = 0; b < B; ++b)
      std::copy_n(batch.center_frames.values().data() + (static_cast<std::size_t>(b) * T + t) * plane,
                  plane, x.v.data() + static_cast<std::size_t>(b) * plane);

    for (const StageSpec& st : spec.stages) {
      if (st.kind == StageKind::Stem) {
        oracle::Grid4 w = grid_of(params.get(st.name + ".conv.weight"));
        x = oracle::conv2d(x, w, {}, st.stride, st.kernel / 2, 1);
        auto gm = params.get(st.name + ".affine.gamma").values();
        auto bt = params.get(st.name + ".affine.beta").values();
        for (int n = 0; n < x.n; ++n)
          for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < x.h; ++y)
              for (int xx = 0; xx < x.w; ++xx) {
                double v = x.at(n, c, y, xx) * gm[static_cast<std::size_t>(c)] +
                           bt[static_cast<std::size_t>(c)];
                x.at(n, c, y, xx) = v > 0 ? v : 0;
              }
      } else {
        for (int b = 0; b < st.blocks; ++b) {
          const std::string bn = st.name + ".block" + std::to_string(b);
          const int stride = (b == 0) ? st.stride : 1;
          oracle::Grid4 skip = x;
          if (params.has(bn + ".proj.weight"))
            skip = oracle::conv2d(x, grid_of(params.get(bn + ".proj.weight")), {}, stride, 0, 1);
          oracle::Grid4 y = oracle::conv2d(x, grid_of(params.get(bn + ".conv.weight")), {},
                                           stride, 1, 1);
          auto gm = params.get(bn + ".affine.gamma").values();
          auto bt = params.get(bn + ".affine.beta").values();
          for (int n = 0; n < y.n; ++n)
            for (int c = 0; c < y.c; ++c)
              for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx) {
                  double v = y.at(n, c, yy, xx) * gm[static_cast<std::size_t>(c)] +
                             bt[static_cast<std::size_t>(c)] + skip.at(n, c, yy, xx);
                  y.at(n, c, yy, xx) = v > 0 ? v : 0;
                }
          x = y;
        }
      }
    }

    std::vector<double> pooled = oracle::global_avg_pool(x);
    auto fw = params.get("head.fc.weight").values();
    auto fb = params.get("head.fc.bias").values();
    std::vector<double> lt = oracle::linear(pooled, B, x.c, {fw.begin(), fw.end()}, spec.classes,
                                            {fb.begin(), fb.end()});
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += lt[i] / T;
  }
  return logits;
}

}  // namespace

TEST_CASE("tiny model: logits shape and spec round trip") {
  ModelSpec spec = tiny_spec();
  CHECK(spec.segments == 4);
  CHECK(spec.stages.size() == 4);
  TdnModel model(spec, 123);
  ClipBatch batch = random_clip_batch(spec, 3, 9);
  Tensor logits = model.forward(batch);
  CHECK(logits.shape() == Shape{3, 8});
}

TEST_CASE("placements none reduces to an independently coded plain CNN") {
  ModelSpec spec = tiny_spec();
  for (auto& st : spec.stages) st.module = Placement::None;
  TdnModel model(spec, 321);
  ClipBatch batch = random_clip_batch(spec, 2, 11);
  Tensor logits = model.forward(batch);
  std::vector<double> ref = plain_cnn_logits(model, batch);
  CHECK(max_abs_diff(logits.values(), ref) <= 1e-9);
}

TEST_CASE("stdm after a cross-segment stage is rejected") {
  ModelSpec spec = tiny_spec();
  std::swap(spec.stages[1].module, spec.stages[2].module);  // stdm after ltdm
  CHECK_THROWS_AS(validate_model_spec(spec), Error);
  CHECK_THROWS_AS(TdnModel(spec, 1), Error);
}

TEST_CASE("resnet50 placement variants from the location study are constructible") {
  ModelSpec spec = parse_model_spec_file(std::string(TDN_SPEC_DIR) + "/resnet50.spec");
  // (S@1, L@2-5), (S@1-2, L@3-5), (S@1-3, L@4-5)
  {
    ModelSpec v = spec;
    v.stages[1].module = Placement::Ltdm;
    validate_model_spec(v);
    TdnModel m(v, 1);
    CHECK(m.params().count() > 0);
  }
  {
    ModelSpec v = spec;
    validate_model_spec(v);
    TdnModel m(v, 1);
    CHECK(m.params().count() > 0);
  }
  {
    ModelSpec v = spec;
    v.stages[2].module = Placement::Stdm;
    validate_model_spec(v);
    TdnModel m(v, 1);
    CHECK(m.params().count() > 0);
  }
}

TEST_CASE("segment permutation: sensitive with ltdm, invariant without") {
  ModelSpec spec = tiny_spec();
  ClipBatch batch = random_clip_batch(spec, 2, 21);
  ClipBatch permuted = permute_segments(batch, {2, 0, 3, 1});

  TdnModel with_ltdm(spec, 55);
  Tensor a = with_ltdm.forward(batch);
  Tensor b = with_ltdm.forward(permuted);
  CHECK(max_abs_diff(a.values(), b.values()) > 1e-9);

  ModelSpec none = spec;
  for (auto& st : none.stages) st.module = Placement::None;
  TdnModel plain(none, 55);
  Tensor c = plain.forward(batch);
  Tensor d = plain.forward(permuted);
  CHECK(max_abs_diff(c.values(), d.values()) <= 1e-12);
}

TEST_CASE("weight sharing: one perturbed conv weight shifts all segments alike") {
  ModelSpec spec = tiny_spec();
  for (auto& st : spec.stages) st.module = Placement::None;
  TdnModel model(spec, 77);

  // identical frames in every segment
  ClipBatch batch = random_clip_batch(spec, 1, 31);
  const int T = spec.segments, H = spec.input_size, W = spec.input_size;
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  std::vector<double> c(batch.center_frames.values().begin(), batch.center_frames.values().end());
  for (int t = 1; t < T; ++t) std::copy_n(c.data(), plane, c.data() + t * plane);
  batch.center_frames = Tensor::from({1, T, 3, H, W}, std::move(c));

  TdnModel::ForwardRecord rec0, rec1;
  model.forward(batch, &rec0);
  model.params().get("stage2.block0.conv.weight").values_mut()[0] += 0.125;
  model.forward(batch, &rec1);
  const auto& before = rec0.conv_acts.at("stage2.block0.conv");
  const auto& after = rec1.conv_acts.at("stage2.block0.conv");
  // the perturbation reaches the layer ...
  CHECK(max_abs_diff(before[0].values(), after[0].values()) > 0.0);
  // ... and with identical per-segment inputs plus shared weights, every
  // segment's activation is the same tensor before and after
  for (int t = 1; t < T; ++t) {
    CHECK(max_abs_diff(before[0].values(), before[static_cast<std::size_t>(t)].values()) == 0.0);
    CHECK(max_abs_diff(after[0].values(), after[static_cast<std::size_t>(t)].values()) == 0.0);
  }
}

TEST_CASE("temporally constant clips are invariant to the neighbor-frame payload") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 88);
  const int T = spec.segments, H = spec.input_size, W = spec.input_size;
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  std::vector<double> frame(static_cast<std::size_t>(plane));
  for (auto& v : frame) v = dist(rng);
  std::vector<double> centers;
  std::vector<double> neighbors;
  for (int t = 0; t < T; ++t) {
    centers.insert(centers.end(), frame.begin(), frame.end());
    for (int k = 0; k < 4; ++k) neighbors.insert(neighbors.end(), frame.begin(), frame.end());
  }
  ClipBatch a;
  a.center_frames = Tensor::from({1, T, 3, H, W}, centers);
  a.neighbor_frames = Tensor::from({1, T, 4, 3, H, W}, neighbors);
  a.labels = {0};
  Tensor la = model.forward(a);

  // a static clip has zero differences however the neighbors are stored:
  // dropping the neighbor tensor entirely must not change the output of a
  // model whose branch input is the difference
  ClipBatch b = a;
  std::vector<double> n2(neighbors);
  // (equal to centers already; rebuild to prove value-independence)
  b.neighbor_frames = Tensor::from({1, T, 4, 3, H, W}, n2);
  Tensor lb = model.forward(b);
  CHECK(max_abs_diff(la.values(), lb.values()) == 0.0);
}

TEST_CASE("save/load round trip preserves the forward bit-exactly") {
  ModelSpec spec = tiny_spec();
  TdnModel model(spec, 99);
  ClipBatch batch = random_clip_batch(spec, 2, 51);
  Tensor before = model.forward(batch);

  auto dir = std::filesystem::temp_directory_path() / "tdn_model_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  save_model(path, model);
  TdnModel loaded = load_model(path, spec);
  Tensor after = loaded.forward(batch);
  CHECK(max_abs_diff(before.values(), after.values()) == 0.0);

  // a renamed key is reported by name
  auto entries = load_checkpoint(path);
  ParamStore tampered;
  for (auto& [name, t] : entries)
    tampered.add(name == "head.fc.bias" ? "head.fc.bias_renamed" : name, t);
  save_checkpoint(path, tampered);
  try {
    load_model(path, spec);
    CHECK(false);
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("head.fc.bias") != std::string::npos);
    CHECK(msg.find("head.fc.bias_renamed") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
