#include "tdn/model.hpp"

#include <algorithm>
#include <sstream>

#include "tdn/nn_ops.hpp"
#include "tdn/util.hpp"

namespace tdn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail("spec: boolean expected for '", key, "', got '", v, "'");
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  fail("spec: integer expected for '", key, "', got '", v, "'");
}

Placement parse_placement(const std::string& v) {
  if (v == "none") return Placement::None;
  if (v == "stdm") return Placement::Stdm;
  if (v == "ltdm") return Placement::Ltdm;
  if (v == "tconv") return Placement::Tconv;
  fail("spec: module must be one of none|stdm|ltdm|tconv, got '", v, "'");
}

}  // namespace

std::string stdm_fusion_name(StdmFusion f) {
  switch (f) {
    case StdmFusion::Add: return "add";
    case StdmFusion::Attention: return "attention";
    case StdmFusion::AddPlusAttention: return "add_plus_attention";
    case StdmFusion::ChannelAttention: return "channel_attention";
    case StdmFusion::ChannelAttentionPlusAdd: return "channel_attention_plus_add";
    case StdmFusion::ConcatBaseline: return "concat_baseline";
  }
  return "?";
}

std::string ltdm_fusion_name(LtdmFusion f) {
  switch (f) {
    case LtdmFusion::ResidualAttention: return "residual_attention";
    case LtdmFusion::PlainAdd: return "plain_add";
    case LtdmFusion::ChannelAttention: return "channel_attention";
  }
  return "?";
}

StdmFusion parse_stdm_fusion(const std::string& s) {
  if (s == "add") return StdmFusion::Add;
  if (s == "attention") return StdmFusion::Attention;
  if (s == "add_plus_attention") return StdmFusion::AddPlusAttention;
  if (s == "channel_attention") return StdmFusion::ChannelAttention;
  if (s == "channel_attention_plus_add") return StdmFusion::ChannelAttentionPlusAdd;
  if (s == "concat_baseline") return StdmFusion::ConcatBaseline;
  fail("unknown stdm fusion '", s,
       "' (valid: add, attention, add_plus_attention, channel_attention, "
       "channel_attention_plus_add, concat_baseline)");
}

LtdmFusion parse_ltdm_fusion(const std::string& s) {
  if (s == "residual_attention") return LtdmFusion::ResidualAttention;
  if (s == "plain_add") return LtdmFusion::PlainAdd;
  if (s == "channel_attention") return LtdmFusion::ChannelAttention;
  fail("unknown ltdm fusion '", s,
       "' (valid: residual_attention, plain_add, channel_attention)");
}

ModelSpec parse_model_spec_text(const std::string& text, const std::string& origin) {
  ModelSpec spec;
  spec.stages.clear();
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  StageSpec* stage = nullptr;
  StageSpec pending;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.rfind("stage ", 0) == 0) {
      TDN_REQUIRE(stage == nullptr, origin, ":", lineno, ": nested stage block");
      std::string rest = trim(line.substr(6));
      TDN_REQUIRE(!rest.empty() && rest.back() == '{', origin, ":", lineno,
                  ": expected 'stage <name> {'");
      pending = StageSpec{};
      pending.name = trim(rest.substr(0, rest.size() - 1));
      TDN_REQUIRE(!pending.name.empty(), origin, ":", lineno, ": stage needs a name");
      stage = &pending;
      continue;
    }
    if (line == "}") {
      TDN_REQUIRE(stage != nullptr, origin, ":", lineno, ": '}' outside a stage block");
      spec.stages.push_back(pending);
      stage = nullptr;
      continue;
    }

    const std::size_t eq = line.find('=');
    TDN_REQUIRE(eq != std::string::npos, origin, ":", lineno, ": expected 'key = value', got '",
                line, "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    TDN_REQUIRE(!key.empty() && !val.empty(), origin, ":", lineno, ": empty key or value");

    if (stage) {
      if (key == "kind") {
        if (val == "stem") stage->kind = StageKind::Stem;
        else if (val == "blocks") stage->kind = StageKind::Blocks;
        else fail(origin, ":", lineno, ": kind must be stem|blocks");
      } else if (key == "channels") stage->channels = parse_int(val, key);
      else if (key == "stride") stage->stride = parse_int(val, key);
      else if (key == "blocks") stage->blocks = parse_int(val, key);
      else if (key == "kernel") stage->kernel = parse_int(val, key);
      else if (key == "maxpool") stage->maxpool = parse_bool(val, key);
      else if (key == "module") stage->module = parse_placement(val);
      else if (key == "ltdm_per_block") stage->ltdm_per_block = parse_bool(val, key);
      else if (key == "stdm_width") stage->stdm_width = parse_int(val, key);
      else fail(origin, ":", lineno, ": unknown stage key '", key, "'");
    } else {
      if (key == "name") spec.name = val;
      else if (key == "segments") spec.segments = parse_int(val, key);
      else if (key == "classes") spec.classes = parse_int(val, key);
      else if (key == "input_size") spec.input_size = parse_int(val, key);
      else if (key == "input_channels") spec.input_channels = parse_int(val, key);
      else if (key == "block") {
        if (val == "single") spec.block_style = BlockStyle::Single;
        else if (val == "bottleneck") spec.block_style = BlockStyle::Bottleneck;
        else fail(origin, ":", lineno, ": block must be single|bottleneck");
      } else if (key == "consensus") {
        TDN_REQUIRE(val == "average", origin, ":", lineno,
                    ": only 'average' consensus is supported");
      } else if (key == "tconv_kt") spec.tconv_kt = parse_int(val, key);
      else if (key == "ltdm_ratio") spec.ltdm_ratio = parse_int(val, key);
      else if (key == "ltdm_multiscale") spec.ltdm_multiscale = parse_bool(val, key);
      else if (key == "ltdm_bidirectional") spec.ltdm_bidirectional = parse_bool(val, key);
      else if (key == "ltdm_fusion") spec.ltdm_fusion = parse_ltdm_fusion(val);
      else if (key == "ltdm_avg_baseline") spec.ltdm_avg_baseline = parse_bool(val, key);
      else if (key == "stdm_fusion") spec.stdm_fusion = parse_stdm_fusion(val);
      else if (key == "stdm_downsample") spec.stdm_downsample = parse_int(val, key);
      else fail(origin, ":", lineno, ": unknown key '", key, "'");
    }
  }
  TDN_REQUIRE(stage == nullptr, origin, ": unterminated stage block");
  validate_model_spec(spec);
  return spec;
}

ModelSpec parse_model_spec_file(const std::string& path) {
  return parse_model_spec_text(read_file(path), path);
}

void validate_model_spec(const ModelSpec& spec) {
  TDN_REQUIRE(spec.segments >= 1, "spec: segments must be >= 1, got ", spec.segments);
  TDN_REQUIRE(spec.classes >= 2, "spec: classes must be >= 2, got ", spec.classes);
  TDN_REQUIRE(spec.input_size >= 4, "spec: input_size must be >= 4, got ", spec.input_size);
  TDN_REQUIRE(spec.input_channels == 3, "spec: only 3-channel input is supported");
  TDN_REQUIRE(!spec.stages.empty(), "spec: at least one stage required");
  TDN_REQUIRE(spec.tconv_kt >= 1 && spec.tconv_kt % 2 == 1, "spec: tconv_kt must be odd");

  bool seen_cross_segment = false;
  int in_ch = spec.input_channels;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    TDN_REQUIRE(st.channels >= 1, "spec: stage '", st.name, "' needs channels >= 1");
    TDN_REQUIRE(st.stride >= 1, "spec: stage '", st.name, "' needs stride >= 1");
    if (st.kind == StageKind::Stem) {
      TDN_REQUIRE(i == 0, "spec: stem stage '", st.name, "' must come first");
      TDN_REQUIRE(st.kernel >= 1 && st.kernel % 2 == 1, "spec: stem kernel must be odd");
      TDN_REQUIRE(st.module != Placement::Ltdm && st.module != Placement::Tconv,
                  "spec: stem stage '", st.name, "' cannot carry ltdm/tconv");
    } else {
      TDN_REQUIRE(st.blocks >= 1, "spec: stage '", st.name, "' needs blocks >= 1");
      if (spec.block_style == BlockStyle::Bottleneck)
        TDN_REQUIRE(st.channels % 4 == 0, "spec: bottleneck stage '", st.name,
                    "' needs channels divisible by 4");
    }
    if (st.module == Placement::Stdm) {
      TDN_REQUIRE(!seen_cross_segment, "spec: stdm placement in stage '", st.name,
                  "' after a cross-segment (ltdm/tconv) stage is invalid");
    }
    if (st.module == Placement::Ltdm || st.module == Placement::Tconv) seen_cross_segment = true;
    if (st.module == Placement::Ltdm) {
      TDN_REQUIRE(st.channels % spec.ltdm_ratio == 0, "spec: stage '", st.name, "' channels ",
                  st.channels, " not divisible by ltdm_ratio ", spec.ltdm_ratio);
      TDN_REQUIRE(in_ch % spec.ltdm_ratio == 0, "spec: stage '", st.name, "' input channels ",
                  in_ch, " not divisible by ltdm_ratio ", spec.ltdm_ratio);
    }
    in_ch = st.channels;
  }
}

LTDMConfig TdnModel::ltdm_cfg(int channels) const {
  LTDMConfig cfg;
  cfg.channels = channels;
  cfg.ratio = spec_.ltdm_ratio;
  cfg.multi_scale = spec_.ltdm_multiscale;
  cfg.bidirectional = spec_.ltdm_bidirectional;
  cfg.fusion = spec_.ltdm_fusion;
  cfg.averaging_baseline = spec_.ltdm_avg_baseline;
  return cfg;
}

void TdnModel::build(std::mt19937_64& rng) {
  validate_model_spec(spec_);
  int in_ch = spec_.input_channels;
  for (const StageSpec& st : spec_.stages) {
    StageRuntime rt;
    rt.cfg = st;
    rt.in_channels = in_ch;
    if (st.kind == StageKind::Stem) {
      rt.stem_conv_w = params_.add(st.name + ".conv.weight",
                                   kaiming_uniform({st.channels, in_ch, st.kernel, st.kernel},
                                                   in_ch * st.kernel * st.kernel, rng));
      rt.stem_gamma = params_.add(st.name + ".affine.gamma", ones_param({st.channels}));
      rt.stem_beta = params_.add(st.name + ".affine.beta", zeros_param({st.channels}));
      conv_names_.push_back(st.name + ".conv");
    } else {
      const int mid = st.channels / 4;
      int block_in = in_ch;
      for (int b = 0; b < st.blocks; ++b) {
        BlockParams bp;
        const std::string bname = st.name + ".block" + std::to_string(b);
        const int stride = (b == 0) ? st.stride : 1;
        if (st.module == Placement::Ltdm && (st.ltdm_per_block || b == 0)) {
          bp.ltdm = make_ltdm_params(params_, bname + ".ltdm", ltdm_cfg(block_in), rng);
        }
        if (st.module == Placement::Ltdm || st.module == Placement::Tconv) {
          bp.tconv_w = params_.add(bname + ".tconv.weight",
                                   delta_temporal(block_in, spec_.tconv_kt));
        }
        if (spec_.block_style == BlockStyle::Single) {
          bp.conv_w.push_back(params_.add(
              bname + ".conv.weight", kaiming_uniform({st.channels, block_in, 3, 3},
                                                      block_in * 9, rng)));
          bp.aff_gamma.push_back(params_.add(bname + ".affine.gamma", ones_param({st.channels})));
          bp.aff_beta.push_back(params_.add(bname + ".affine.beta", zeros_param({st.channels})));
          conv_names_.push_back(bname + ".conv");
        } else {
          bp.conv_w.push_back(params_.add(bname + ".conv1.weight",
                                          kaiming_uniform({mid, block_in, 1, 1}, block_in, rng)));
          bp.aff_gamma.push_back(params_.add(bname + ".affine1.gamma", ones_param({mid})));
          bp.aff_beta.push_back(params_.add(bname + ".affine1.beta", zeros_param({mid})));
          bp.conv_w.push_back(params_.add(bname + ".conv2.weight",
                                          kaiming_uniform({mid, mid, 3, 3}, mid * 9, rng)));
          bp.aff_gamma.push_back(params_.add(bname + ".affine2.gamma", ones_param({mid})));
          bp.aff_beta.push_back(params_.add(bname + ".affine2.beta", zeros_param({mid})));
          bp.conv_w.push_back(params_.add(bname + ".conv3.weight",
                                          kaiming_uniform({st.channels, mid, 1, 1}, mid, rng)));
          bp.aff_gamma.push_back(params_.add(bname + ".affine3.gamma", ones_param({st.channels})));
          bp.aff_beta.push_back(params_.add(bname + ".affine3.beta", zeros_param({st.channels})));
          conv_names_.push_back(bname + ".conv1");
          conv_names_.push_back(bname + ".conv2");
          conv_names_.push_back(bname + ".conv3");
        }
        if (block_in != st.channels || stride != 1) {
          bp.proj_w = params_.add(bname + ".proj.weight",
                                  kaiming_uniform({st.channels, block_in, 1, 1}, block_in, rng));
        }
        rt.blocks.push_back(std::move(bp));
        block_in = st.channels;
      }
    }
    if (st.module == Placement::Stdm) {
      rt.stdm_cfg.out_channels = st.channels;
      rt.stdm_cfg.width = st.stdm_width > 0 ? st.stdm_width : std::max(8, st.channels / 4);
      rt.stdm_cfg.fusion = spec_.stdm_fusion;
      rt.stdm_cfg.downsample = spec_.stdm_downsample;
      rt.stdm = make_stdm_params(params_, st.name + ".stdm", rt.stdm_cfg, rng);
    }
    stages_.push_back(std::move(rt));
    in_ch = st.channels;
  }
  head_w_ = params_.add("head.fc.weight", kaiming_uniform({spec_.classes, in_ch}, in_ch, rng));
  head_b_ = params_.add("head.fc.bias", zeros_param({spec_.classes}));
}

TdnModel::TdnModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), params_(seed) {
  std::mt19937_64 rng(seed);
  build(rng);
}

TdnModel::TdnModel(ModelSpec spec, const std::map<std::string, Tensor>& loaded)
    : spec_(std::move(spec)), params_(0) {
  std::mt19937_64 rng(0);
  build(rng);
  // Validate the checkpoint against the freshly built parameter set, then
  // copy values in. All discrepancies are reported at once.
  std::vector<std::string> problems;
  for (const auto& [name, t] : params_.entries()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      problems.push_back("missing from checkpoint: " + name);
    } else if (!same_shape(it->second.shape(), t.shape())) {
      problems.push_back("shape mismatch for " + name + ": spec " + shape_str(t.shape()) +
                         " vs checkpoint " + shape_str(it->second.shape()));
    }
  }
  for (const auto& [name, t] : loaded) {
    if (!params_.has(name)) problems.push_back("unexpected checkpoint entry: " + name);
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(msg);
  }
  for (const auto& [name, t] : loaded) {
    Tensor dst = params_.get(name);
    auto dv = dst.values_mut();
    auto sv = t.values();
    std::copy(sv.begin(), sv.end(), dv.begin());
  }
}

namespace {

// Shared by every segment: one residual block. Single style is
// relu(affine(conv3x3) + skip); bottleneck is the standard 1x1/3x3/1x1 with
// the stride on the 3x3.
Tensor block_forward(const Tensor& x, const std::vector<Tensor>& conv_w,
                     const std::vector<Tensor>& gammas, const std::vector<Tensor>& betas,
                     const Tensor& proj_w, int stride, BlockStyle style,
                     std::vector<std::pair<std::string, Tensor>>* acts,
                     const std::string& bname) {
  Tensor skip = x;
  if (proj_w.defined()) skip = conv2d(x, proj_w, Tensor{}, stride, 0);
  Tensor y;
  if (style == BlockStyle::Single) {
    y = conv2d(x, conv_w[0], Tensor{}, stride, 1);
    if (acts) acts->push_back({bname + ".conv", y});
    y = channel_affine(y, gammas[0], betas[0]);
  } else {
    y = conv2d(x, conv_w[0], Tensor{}, 1, 0);
    if (acts) acts->push_back({bname + ".conv1", y});
    y = relu(channel_affine(y, gammas[0], betas[0]));
    y = conv2d(y, conv_w[1], Tensor{}, stride, 1);
    if (acts) acts->push_back({bname + ".conv2", y});
    y = relu(channel_affine(y, gammas[1], betas[1]));
    y = conv2d(y, conv_w[2], Tensor{}, 1, 0);
    if (acts) acts->push_back({bname + ".conv3", y});
    y = channel_affine(y, gammas[2], betas[2]);
  }
  return relu(add(y, skip));
}

}  // namespace

std::vector<Tensor> TdnModel::run_backbone(std::vector<Tensor> segs,
                                           const std::vector<Tensor>& branch_inputs,
                                           ForwardRecord* record) const {
  const int T = static_cast<int>(segs.size());
  auto record_act = [&](const std::string& name, const Tensor& t) {
    if (record) record->conv_acts[name].push_back(t);
  };

  for (const StageRuntime& rt : stages_) {
    const StageSpec& st = rt.cfg;
    if (st.kind == StageKind::Stem) {
      for (int t = 0; t < T; ++t) {
        Tensor y = conv2d(segs[static_cast<std::size_t>(t)], rt.stem_conv_w, Tensor{}, st.stride,
                          st.kernel / 2);
        record_act(st.name + ".conv", y);
        segs[static_cast<std::size_t>(t)] =
            relu(channel_affine(y, rt.stem_gamma, rt.stem_beta));
      }
      if (rt.stdm) {
        for (int t = 0; t < T; ++t)
          segs[static_cast<std::size_t>(t)] =
              stdm_forward(segs[static_cast<std::size_t>(t)],
                           branch_inputs[static_cast<std::size_t>(t)], rt.stdm_cfg, *rt.stdm);
      }
      if (st.maxpool)
        for (int t = 0; t < T; ++t)
          segs[static_cast<std::size_t>(t)] = max_pool2d(segs[static_cast<std::size_t>(t)], 2, 2);
      continue;
    }

    int block_in = rt.in_channels;
    for (std::size_t b = 0; b < rt.blocks.size(); ++b) {
      const BlockParams& bp = rt.blocks[b];
      const std::string bname = st.name + ".block" + std::to_string(b);
      const int stride = (b == 0) ? st.stride : 1;
      if (bp.ltdm) {
        segs = ltdm_forward(segs, ltdm_cfg(block_in), *bp.ltdm);
      }
      if (bp.tconv_w.defined()) {
        Tensor packed = temporal_conv(stack_segments(segs), bp.tconv_w, spec_.tconv_kt / 2);
        for (int t = 0; t < T; ++t) segs[static_cast<std::size_t>(t)] = slice_segment(packed, t);
      }
      for (int t = 0; t < T; ++t) {
        std::vector<std::pair<std::string, Tensor>> acts;
        segs[static_cast<std::size_t>(t)] =
            block_forward(segs[static_cast<std::size_t>(t)], bp.conv_w, bp.aff_gamma,
                          bp.aff_beta, bp.proj_w, stride, spec_.block_style,
                          record ? &acts : nullptr, bname);
        for (auto& [name, act] : acts) record_act(name, act);
      }
      block_in = st.channels;
    }
    if (rt.stdm) {
      for (int t = 0; t < T; ++t)
        segs[static_cast<std::size_t>(t)] =
            stdm_forward(segs[static_cast<std::size_t>(t)],
                         branch_inputs[static_cast<std::size_t>(t)], rt.stdm_cfg, *rt.stdm);
    }
  }
  return segs;
}

Tensor TdnModel::forward(const ClipBatch& batch, ForwardRecord* record) const {
  TDN_REQUIRE(batch.center_frames.defined(), "forward: empty clip batch");
  const int T = batch.segments();
  TDN_REQUIRE(T == spec_.segments, "forward: batch has T=", T, " segments, spec expects ",
              spec_.segments);
  TDN_REQUIRE(batch.height() == spec_.input_size && batch.width() == spec_.input_size,
              "forward: frame extent ", batch.height(), "x", batch.width(),
              " does not match spec input_size ", spec_.input_size);
  const int B = batch.batch();
  const int H = batch.height(), W = batch.width();

  // Per-segment inputs; the S-TDM branch input is the stacked differences
  // (or stacked raw neighbors for the concat baseline). These are leaves.
  std::vector<Tensor> segs, branch_inputs;
  segs.reserve(static_cast<std::size_t>(T));
  branch_inputs.reserve(static_cast<std::size_t>(T));
  const bool any_stdm =
      std::any_of(stages_.begin(), stages_.end(), [](const StageRuntime& rt) {
        return rt.cfg.module == Placement::Stdm;
      });
  const bool concat_input = spec_.stdm_fusion == StdmFusion::ConcatBaseline;
  const double* centers = batch.center_frames.values().data();
  const double* neigh = batch.neighbor_frames.defined() ? batch.neighbor_frames.values().data()
                                                        : nullptr;
  const std::int64_t plane = static_cast<std::int64_t>(3) * H * W;
  for (int t = 0; t < T; ++t) {
    std::vector<double> c(static_cast<std::size_t>(B) * plane);
    for (int b = 0; b < B; ++b) {
      const double* src = centers + (static_cast<std::size_t>(b) * T + t) * plane;
      std::copy(src, src + plane, c.data() + static_cast<std::size_t>(b) * plane);
    }
    segs.push_back(Tensor::from({B, 3, H, W}, std::move(c)));
    if (any_stdm) {
      TDN_REQUIRE(neigh != nullptr, "forward: model has S-TDM stages but the batch carries no "
                                    "neighbor frames");
      std::vector<double> d(static_cast<std::size_t>(B) * 4 * plane);
      for (int b = 0; b < B; ++b) {
        const double* nb = neigh + ((static_cast<std::size_t>(b) * T + t) * 4) * plane;
        const double* cb = centers + (static_cast<std::size_t>(b) * T + t) * plane;
        double* dst = d.data() + static_cast<std::size_t>(b) * 4 * plane;
        if (concat_input) {
          std::copy(nb, nb + 4 * plane, dst);
        } else {
          for (int k = 0; k < 4; ++k)
            for (std::int64_t i = 0; i < plane; ++i) dst[k * plane + i] = nb[k * plane + i] - cb[i];
        }
      }
      branch_inputs.push_back(Tensor::from({B, 12, H, W}, std::move(d)));
    } else {
      branch_inputs.push_back(Tensor{});
    }
  }

  segs = run_backbone(std::move(segs), branch_inputs, record);

  // Head: shared classifier per segment, average consensus.
  Tensor acc;
  for (int t = 0; t < T; ++t) {
    Tensor logits_t = linear(global_avg_pool(segs[static_cast<std::size_t>(t)]), head_w_, head_b_);
    acc = (t == 0) ? logits_t : add(acc, logits_t);
  }
  return scale(acc, 1.0 / T);
}

std::string TdnModel::default_cam_layer() const {
  TDN_REQUIRE(!conv_names_.empty(), "model has no conv layers");
  return conv_names_.back();
}

void save_model(const std::string& path, const TdnModel& model) {
  save_checkpoint(path, model.params());
}

TdnModel load_model(const std::string& path, ModelSpec spec) {
  return TdnModel(std::move(spec), load_checkpoint(path));
}

}  // namespace tdn
