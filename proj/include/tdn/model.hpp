#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdn/params.hpp"
#include "tdn/tdm.hpp"
#include "tdn/tensor.hpp"
#include "tdn/video.hpp"

namespace tdn {

enum class Placement { None, Stdm, Ltdm, Tconv };
enum class StageKind { Stem, Blocks };
enum class BlockStyle { Single, Bottleneck };

struct StageSpec {
  std::string name;
  StageKind kind = StageKind::Blocks;
  int channels = 0;
  int stride = 1;
  int blocks = 1;       // Blocks kind
  int kernel = 3;       // Stem kind
  bool maxpool = false; // Stem kind: 2x2/2 max pool after fusion
  Placement module = Placement::None;
  bool ltdm_per_block = true;
  int stdm_width = 0;   // 0 = channels/4, floor 8
};

struct ModelSpec {
  std::string name = "tdn";
  int segments = 4;
  int classes = 8;
  int input_size = 32;
  int input_channels = 3;
  BlockStyle block_style = BlockStyle::Single;
  std::vector<StageSpec> stages;
  int tconv_kt = 3;
  int ltdm_ratio = 8;
  bool ltdm_multiscale = true;
  bool ltdm_bidirectional = true;
  LtdmFusion ltdm_fusion = LtdmFusion::ResidualAttention;
  bool ltdm_avg_baseline = false;
  StdmFusion stdm_fusion = StdmFusion::Add;
  int stdm_downsample = 2;
};

// key = value lines plus `stage <name> { ... }` blocks; see docs/spec-format.md.
ModelSpec parse_model_spec_text(const std::string& text, const std::string& origin = "<string>");
ModelSpec parse_model_spec_file(const std::string& path);

// Structural checks (placement order, divisibility, ...). Throws Error.
void validate_model_spec(const ModelSpec& spec);

std::string stdm_fusion_name(StdmFusion f);
std::string ltdm_fusion_name(LtdmFusion f);
StdmFusion parse_stdm_fusion(const std::string& s);
LtdmFusion parse_ltdm_fusion(const std::string& s);

// The assembled network: shared 2D backbone over segments, S-TDM lateral
// fusion in early stages, L-TDM plus temporal convolution in later stages,
// average consensus over per-segment logits.
class TdnModel {
 public:
  TdnModel(ModelSpec spec, std::uint64_t seed);
  // Builds from checkpoint tensors; every name and shape must match the spec
  // (all discrepancies are listed in the error).
  TdnModel(ModelSpec spec, const std::map<std::string, Tensor>& loaded);

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct ForwardRecord {
    // Backbone conv activations by layer name, one tensor per segment.
    std::map<std::string, std::vector<Tensor>> conv_acts;
  };

  // ClipBatch -> logits [B,K].
  Tensor forward(const ClipBatch& batch, ForwardRecord* record = nullptr) const;

  // Backbone conv layer names in forward order (Grad-CAM targets).
  const std::vector<std::string>& conv_layer_names() const { return conv_names_; }
  std::string default_cam_layer() const;

 private:
  struct BlockParams {
    std::vector<Tensor> conv_w;
    std::vector<Tensor> aff_gamma, aff_beta;
    Tensor proj_w;
    Tensor tconv_w;
    std::optional<LtdmParams> ltdm;
  };
  struct StageRuntime {
    StageSpec cfg;
    STDMConfig stdm_cfg;
    std::optional<StdmParams> stdm;
    Tensor stem_conv_w;
    Tensor stem_gamma, stem_beta;
    std::vector<BlockParams> blocks;
    std::optional<LtdmParams> stage_ltdm;  // when ltdm_per_block = false
    int in_channels = 0;
  };

  void build(std::mt19937_64& rng);
  std::vector<Tensor> run_backbone(std::vector<Tensor> segs,
                                   const std::vector<Tensor>& branch_inputs,
                                   ForwardRecord* record) const;
  LTDMConfig ltdm_cfg(int channels) const;

  ModelSpec spec_;
  ParamStore params_;
  std::vector<StageRuntime> stages_;
  Tensor head_w_, head_b_;
  std::vector<std::string> conv_names_;
};

// Writes / reads the model checkpoint (TDNW format from params.hpp).
void save_model(const std::string& path, const TdnModel& model);
TdnModel load_model(const std::string& path, ModelSpec spec);

}  // namespace tdn
