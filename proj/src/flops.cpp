#include "tdn/flops.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "tdn/util.hpp"

namespace tdn {

namespace {

int conv_out(int h, int k, int s, int p) { return (h + 2 * p - k) / s + 1; }

struct Walk {
  std::vector<LayerFlops>* layers;  // null for the baseline pass
  std::int64_t macs = 0;
  std::int64_t elem = 0;
  std::int64_t t = 1;

  void conv(const std::string& name, int cin, int cout, int k, int stride, int groups, int h_in,
            int w_in, int pad, int* h_out, int* w_out) {
    const int ho = conv_out(h_in, k, stride, pad);
    const int wo = conv_out(w_in, k, stride, pad);
    const std::int64_t per_pos = static_cast<std::int64_t>(k) * k * (cin / groups);
    const std::int64_t m = t * per_pos * cout * ho * wo;
    macs += m;
    if (layers) {
      std::ostringstream d;
      d << cin << "->" << cout << " " << k << "x" << k << "/" << stride << " @" << ho << "x" << wo;
      layers->push_back({name, d.str(), m, 0});
    }
    if (h_out) *h_out = ho;
    if (w_out) *w_out = wo;
  }

  void fc(const std::string& name, int cin, int cout) {
    const std::int64_t m = t * static_cast<std::int64_t>(cin) * cout;
    macs += m;
    if (layers) layers->push_back({name, strcat_msg(cin, "->", cout, " fc"), m, 0});
  }

  void elementwise(std::int64_t count) { elem += t * count; }
};

struct StdmDims {
  int width;
};

int stdm_width_of(const StageSpec& st) {
  return st.stdm_width > 0 ? st.stdm_width : std::max(8, st.channels / 4);
}

// Mirrors stdm_branch: pool, conv1, affine+relu, conv2, extra pools, upsample,
// fusion. `in_h` is the frame extent, `out_h` the stage output extent.
void count_stdm(Walk& w, const std::string& prefix, const StageSpec& st, StdmFusion fusion,
                int downsample, int in_h, int in_w, int out_h, int out_w) {
  const int width = stdm_width_of(st);
  const StdmBranchPlan plan = stdm_branch_plan(in_h, out_h, downsample);
  int h = in_h, wd = in_w;
  if (downsample > 1) {
    h = (h - downsample) / downsample + 1;
    wd = (wd - downsample) / downsample + 1;
    w.elementwise(static_cast<std::int64_t>(12) * h * wd);
  }
  w.conv(prefix + ".conv1", 12, width, 3, plan.s1, 1, h, wd, 1, &h, &wd);
  w.elementwise(2LL * width * h * wd);  // affine + relu
  w.conv(prefix + ".conv2", width, st.channels, 3, plan.s2, 1, h, wd, 1, &h, &wd);
  for (int i = 0; i < plan.extra_pools; ++i) {
    h = (h - 2) / 2 + 1;
    wd = (wd - 2) / 2 + 1;
    w.elementwise(static_cast<std::int64_t>(st.channels) * h * wd);
  }
  w.elementwise(static_cast<std::int64_t>(st.channels) * out_h * out_w);  // upsample
  const std::int64_t fused = static_cast<std::int64_t>(st.channels) * out_h * out_w;
  switch (fusion) {
    case StdmFusion::Add:
    case StdmFusion::ConcatBaseline: w.elementwise(fused); break;
    case StdmFusion::Attention: w.elementwise(2 * fused); break;
    case StdmFusion::AddPlusAttention: w.elementwise(3 * fused); break;
    case StdmFusion::ChannelAttention: w.elementwise(fused + 2 * st.channels); break;
    case StdmFusion::ChannelAttentionPlusAdd: w.elementwise(2 * fused + 2 * st.channels); break;
  }
}

// Mirrors ltdm_forward for one placement: compression once per segment,
// then one or two attention passes per segment pair plus the fusion.
void count_ltdm(Walk& w, const std::string& prefix, const ModelSpec& spec, int channels, int h,
                int wd) {
  const int cr = channels / spec.ltdm_ratio;
  const std::int64_t hw = static_cast<std::int64_t>(h) * wd;
  w.conv(prefix + ".compress", channels, cr, 1, 1, 1, h, wd, 0, nullptr, nullptr);
  const int dirs = spec.ltdm_bidirectional ? 2 : 1;
  for (int d = 0; d < dirs; ++d) {
    const std::string dn = prefix + (d == 0 ? ".fwd" : ".bwd");
    w.conv(dn + ".smooth", cr, cr, 3, 1, cr, h, wd, 1, nullptr, nullptr);
    w.elementwise(cr * hw);  // difference (or mean)
    if (spec.ltdm_multiscale) {
      w.conv(dn + ".branch3", cr, cr, 3, 1, 1, h, wd, 1, nullptr, nullptr);
      const int hp = (h - 2) / 2 + 1, wp = (wd - 2) / 2 + 1;
      w.elementwise(static_cast<std::int64_t>(cr) * hp * wp);  // pool
      w.conv(dn + ".branchpool", cr, cr, 3, 1, 1, hp, wp, 1, nullptr, nullptr);
      w.elementwise(cr * hw);      // upsample
      w.elementwise(2 * cr * hw);  // two branch adds
    }
    w.conv(dn + ".expand", cr, channels, 1, 1, 1, h, wd, 0, nullptr, nullptr);
    w.elementwise(channels * hw);  // sigmoid
  }
  if (spec.ltdm_bidirectional) w.elementwise(channels * hw);  // direction average
  w.elementwise(2 * channels * hw);                            // gate + residual
}

void walk_spec(const ModelSpec& spec, int input_size, int segments, Walk& w) {
  w.t = segments;
  int h = input_size, wd = input_size;
  int in_ch = spec.input_channels;
  for (const StageSpec& st : spec.stages) {
    if (st.kind == StageKind::Stem) {
      const int fh = h, fw = wd;
      w.conv(st.name + ".conv", in_ch, st.channels, st.kernel, st.stride, 1, h, wd, st.kernel / 2,
             &h, &wd);
      w.elementwise(2LL * st.channels * h * wd);  // affine + relu
      if (st.module == Placement::Stdm)
        count_stdm(w, st.name + ".stdm", st, spec.stdm_fusion, spec.stdm_downsample, fh, fw, h,
                   wd);
      if (st.maxpool) {
        h = (h - 2) / 2 + 1;
        wd = (wd - 2) / 2 + 1;
        w.elementwise(static_cast<std::int64_t>(st.channels) * h * wd);
      }
      in_ch = st.channels;
      continue;
    }

    int block_in = in_ch;
    for (int b = 0; b < st.blocks; ++b) {
      const std::string bname = st.name + ".block" + std::to_string(b);
      const int stride = (b == 0) ? st.stride : 1;
      if (st.module == Placement::Ltdm && (st.ltdm_per_block || b == 0))
        count_ltdm(w, bname + ".ltdm", spec, block_in, h, wd);
      if (st.module == Placement::Ltdm || st.module == Placement::Tconv) {
        const std::int64_t m = w.t * static_cast<std::int64_t>(spec.tconv_kt) * block_in * h * wd;
        w.macs += m;
        if (w.layers)
          w.layers->push_back({bname + ".tconv",
                               strcat_msg(block_in, "ch k", spec.tconv_kt, " @", h, "x", wd), m, 0});
      }
      int ho = h, wo = wd;
      if (spec.block_style == BlockStyle::Single) {
        w.conv(bname + ".conv", block_in, st.channels, 3, stride, 1, h, wd, 1, &ho, &wo);
        w.elementwise(2LL * st.channels * ho * wo);
      } else {
        const int mid = st.channels / 4;
        int h2, w2;
        w.conv(bname + ".conv1", block_in, mid, 1, 1, 1, h, wd, 0, &h2, &w2);
        w.elementwise(2LL * mid * h2 * w2);
        w.conv(bname + ".conv2", mid, mid, 3, stride, 1, h2, w2, 1, &h2, &w2);
        w.elementwise(2LL * mid * h2 * w2);
        w.conv(bname + ".conv3", mid, st.channels, 1, 1, 1, h2, w2, 0, &ho, &wo);
        w.elementwise(2LL * st.channels * ho * wo);
      }
      if (block_in != st.channels || stride != 1)
        w.conv(bname + ".proj", block_in, st.channels, 1, stride, 1, h, wd, 0, nullptr, nullptr);
      w.elementwise(2LL * st.channels * ho * wo);  // residual add + relu
      h = ho;
      wd = wo;
      block_in = st.channels;
    }
    if (st.module == Placement::Stdm)
      count_stdm(w, st.name + ".stdm", st, spec.stdm_fusion, spec.stdm_downsample, input_size,
                 input_size, h, wd);
    in_ch = st.channels;
  }
  w.elementwise(static_cast<std::int64_t>(in_ch) * h * wd);  // global average pool
  w.fc("head.fc", in_ch, spec.classes);
  w.elementwise(spec.classes);  // consensus
}

ModelSpec strip_modules(ModelSpec spec) {
  for (auto& st : spec.stages) st.module = Placement::None;
  return spec;
}

}  // namespace

FlopReport count_flops(const ModelSpec& spec, int input_size, int segments) {
  TDN_REQUIRE(input_size >= 4, "count_flops: input size must be >= 4");
  TDN_REQUIRE(segments >= 1, "count_flops: segments must be >= 1");
  FlopReport report;
  report.segments = segments;
  report.input_size = input_size;

  Walk tdn_walk;
  tdn_walk.layers = &report.layers;
  walk_spec(spec, input_size, segments, tdn_walk);
  report.tdn_macs = tdn_walk.macs;
  report.tdn_elem = tdn_walk.elem;

  Walk base_walk;
  base_walk.layers = nullptr;
  walk_spec(strip_modules(spec), input_size, segments, base_walk);
  report.baseline_macs = base_walk.macs;
  report.baseline_elem = base_walk.elem;
  return report;
}

std::string format_flop_table(const FlopReport& report) {
  std::size_t name_w = 14, desc_w = 14;
  for (const auto& l : report.layers) {
    name_w = std::max(name_w, l.name.size());
    desc_w = std::max(desc_w, l.desc.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer"
     << std::setw(static_cast<int>(desc_w) + 2) << "shape" << std::right << std::setw(16) << "MACs"
     << "\n";
  for (const auto& l : report.layers) {
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << l.name
       << std::setw(static_cast<int>(desc_w) + 2) << l.desc << std::right << std::setw(16)
       << l.macs << "\n";
  }
  os << "\n";
  os << "segments:            " << report.segments << "  input: " << report.input_size << "x"
     << report.input_size << "\n";
  os << "tdn MACs:            " << report.tdn_macs << "  ("
     << format_double(static_cast<double>(report.tdn_macs) / 1e9, 3) << " G)\n";
  os << "baseline-2d MACs:    " << report.baseline_macs << "  ("
     << format_double(static_cast<double>(report.baseline_macs) / 1e9, 3) << " G)\n";
  os << "tdn elementwise:     " << report.tdn_elem << "\n";
  os << "baseline elementwise:" << report.baseline_elem << "\n";
  os << "tdn/baseline ratio:  " << format_double(report.ratio(), 4) << "\n";
  return os.str();
}

std::string flop_report_csv(const FlopReport& report) {
  std::ostringstream os;
  os << "layer,shape,macs\n";
  for (const auto& l : report.layers) os << l.name << "," << l.desc << "," << l.macs << "\n";
  os << "total_tdn,," << report.tdn_macs << "\n";
  os << "total_baseline,," << report.baseline_macs << "\n";
  os << "ratio,," << format_double(report.ratio(), 6) << "\n";
  return os.str();
}

}  // namespace tdn
