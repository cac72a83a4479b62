#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "raffnet/anchors.hpp"
#include "raffnet/encoder.hpp"
#include "raffnet/fecal.hpp"
#include "raffnet/fusion.hpp"

namespace raffnet {

// Ablation tiers: classifier only, + main adapter, + fecal branch and gated fusion.
enum class Preset { kClipBase, kTransBase, kFull };

std::string to_string(Preset p);
Preset parse_preset(const std::string& s);

struct ModelConfig {
  std::string backend = "toy-vit-d16";
  Preset preset = Preset::kFull;
  AnchorConfig anchors = default_anchor_config();
  std::vector<std::string> prompts = default_prompts();
  Aggregation aggregation;
  // Fecal backbone starts from the main backbone's weights (and stays frozen).
  bool share_backbone_init = true;
  std::uint64_t seed = 0;

  bool uses_adapter() const { return preset != Preset::kClipBase; }
  bool uses_fecal() const { return preset == Preset::kFull; }
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Inference {
  FusionState<double> state;  // z_f, z_f_proj, alpha empty without the fecal branch
  Matrix anchor_scores;       // A x P
  int predicted = 0;
};

struct BackwardOptions {
  bool main_backbone = true;
  bool fecal_adapter = true;
};

struct ParamView {
  std::string name;
  double* data;
  Index rows, cols;
  Eigen::Map<Matrix> map() const { return {data, rows, cols}; }
};

struct ConstParamView {
  std::string name;
  const double* data;
  Index rows, cols;
  Eigen::Map<const Matrix> map() const { return {data, rows, cols}; }
};

// Main branch z_v = adapter(backbone(x)); fecal branch z_f from anchor
// similarities to the prompt bank; gated fusion then a linear classifier.
class RaffNet {
 public:
  explicit RaffNet(const ModelConfig& cfg);
  RaffNet(const RaffNet& other);
  RaffNet& operator=(const RaffNet& other);
  RaffNet(RaffNet&&) noexcept = default;
  RaffNet& operator=(RaffNet&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  Index embed_dim() const { return main_backbone_->embed_dim(); }
  Index anchor_count() const { return static_cast<Index>(anchors_.size()); }
  const std::vector<AnchorBox>& anchors() const { return anchors_; }
  const PromptBank& prompt_bank() const { return bank_; }

  Image to_native(const Image& image) const;

  // Frozen fecal-backbone features per anchor (A x D); safe to cache per image.
  Matrix anchor_features(const Image& image) const;

  Inference forward(const Image& image, const Matrix* anchor_feats = nullptr) const;

  // Adds d(loss)/d(params) into grad, a zeros_like() model; returns the loss.
  double forward_backward(const Image& image, int label, RaffNet& grad, const Matrix* anchor_feats = nullptr,
                          const BackwardOptions& opts = {}) const;

  RaffNet zeros_like() const;
  void set_zero();
  void add(const RaffNet& other, double scale = 1.0);

  std::vector<ParamView> parameters();
  std::vector<ConstParamView> parameters() const;
  std::vector<std::string> parameter_names() const;
  void visit_parameters(const ParamVisitor& v);
  void visit_parameters(const ConstParamVisitor& v) const;

  // Order-sensitive FNV-1a over the raw bytes of the named parameters.
  std::uint64_t checksum(std::string_view prefix = "") const;

  ImageEncoder& main_backbone() { return *main_backbone_; }
  const ImageEncoder& main_backbone() const { return *main_backbone_; }
  const ImageEncoder* fecal_backbone() const { return fecal_backbone_.get(); }
  const TextEncoder* text_encoder() const { return text_.get(); }
  Adapter<double>& main_adapter() { return main_adapter_; }
  Adapter<double>& fecal_adapter() { return fecal_adapter_; }
  const Adapter<double>& fecal_adapter() const { return fecal_adapter_; }
  FusionParams<double>& fusion() { return fusion_; }
  const FusionParams<double>& fusion() const { return fusion_; }

  // Fits the fecal adapter on native-size patches with and without stool-like
  // content; see calibrate_adapter.
  CalibrationResult calibrate_fecal(const std::vector<Image>& positives, const std::vector<Image>& negatives,
                                    const CalibrationOptions& opts = {});

  // Recomputes the prompt embeddings, e.g. after the text encoder was restored.
  void refresh_prompt_bank();

 private:
  struct Trace;
  Trace run(const Image& image, const Matrix* anchor_feats, bool record) const;

  template <typename Self, typename Visitor>
  static void visit_impl(Self& self, Visitor&& v);

  ModelConfig cfg_;
  std::vector<AnchorBox> anchors_;
  std::unique_ptr<ImageEncoder> main_backbone_;
  std::unique_ptr<ImageEncoder> fecal_backbone_;
  std::unique_ptr<TextEncoder> text_;
  PromptBank bank_;
  Adapter<double> main_adapter_;
  Adapter<double> fecal_adapter_;
  FusionParams<double> fusion_;
};

}  // namespace raffnet
