#include "raffnet/model.hpp"

#include <type_traits>

namespace raffnet {

std::string to_string(Preset p) {
  switch (p) {
    case Preset::kClipBase: return "clip-base";
    case Preset::kTransBase: return "trans-base";
    case Preset::kFull: return "full";
  }
  return "full";
}

Preset parse_preset(const std::string& s) {
  if (s == "clip-base") return Preset::kClipBase;
  if (s == "trans-base") return Preset::kTransBase;
  if (s == "full") return Preset::kFull;
  throw DataError("unknown preset '" + s + "' (expected clip-base, trans-base or full)");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"backend", cfg.backend},
          {"preset", to_string(cfg.preset)},
          {"anchors", to_json(cfg.anchors)},
          {"prompts", cfg.prompts},
          {"aggregation", to_string(cfg.aggregation)},
          {"share_backbone_init", cfg.share_backbone_init},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.backend = j.at("backend").get<std::string>();
    cfg.preset = parse_preset(j.at("preset").get<std::string>());
    cfg.anchors = anchor_config_from_json(j.at("anchors"));
    cfg.prompts = j.at("prompts").get<std::vector<std::string>>();
    cfg.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    cfg.share_backbone_init = j.at("share_backbone_init").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
  return cfg;
}

RaffNet::RaffNet(const ModelConfig& cfg) : cfg_(cfg) {
  Backend main = make_backend(cfg.backend, mix_seed(cfg.seed, fnv1a("main.backbone")));
  main_backbone_ = std::move(main.image);
  const Index d = main_backbone_->embed_dim();
  if (cfg.uses_adapter()) {
    Rng rng(mix_seed(cfg.seed, fnv1a("main.adapter")));
    main_adapter_ = make_adapter<double>(d, rng);
  }
  if (cfg.uses_fecal()) {
    anchors_ = generate_anchors(cfg.anchors);
    if (cfg.share_backbone_init) {
      fecal_backbone_ = main_backbone_->clone();
    } else {
      fecal_backbone_ = make_backend(cfg.backend, mix_seed(cfg.seed, fnv1a("fecal.backbone"))).image;
    }
    text_ = std::move(main.text);
    if (!text_) throw DataError("backend '" + cfg.backend + "' has no text encoder");
    if (text_->embed_dim() != d) throw DimensionError("text and image embedding dims differ");
    bank_ = make_prompt_bank(*text_, cfg.prompts);
    Rng rng(mix_seed(cfg.seed, fnv1a("fecal.adapter")));
    fecal_adapter_ = make_adapter<double>(d, rng);
    Rng frng(mix_seed(cfg.seed, fnv1a("fusion")));
    fusion_ = make_fusion<double>(anchor_count(), d, frng);
  } else {
    Rng frng(mix_seed(cfg.seed, fnv1a("fusion")));
    fusion_.classifier = Linear<double>(d, kNumClasses);
    fusion_.classifier.init_normal(frng, 1.0 / std::sqrt(static_cast<double>(d)));
  }
}

RaffNet::RaffNet(const RaffNet& o)
    : cfg_(o.cfg_),
      anchors_(o.anchors_),
      main_backbone_(o.main_backbone_->clone()),
      fecal_backbone_(o.fecal_backbone_ ? o.fecal_backbone_->clone() : nullptr),
      text_(o.text_ ? o.text_->clone() : nullptr),
      bank_(o.bank_),
      main_adapter_(o.main_adapter_),
      fecal_adapter_(o.fecal_adapter_),
      fusion_(o.fusion_) {}

RaffNet& RaffNet::operator=(const RaffNet& o) {
  if (this != &o) *this = RaffNet(o);
  return *this;
}

void RaffNet::refresh_prompt_bank() {
  if (text_) bank_ = make_prompt_bank(*text_, cfg_.prompts);
}

Image RaffNet::to_native(const Image& image) const {
  return raffnet::to_native(image, main_backbone_->native_input());
}

Matrix RaffNet::anchor_features(const Image& image) const {
  if (!fecal_backbone_) return {};
  return raffnet::anchor_features(image, anchors_, *fecal_backbone_);
}

CalibrationResult RaffNet::calibrate_fecal(const std::vector<Image>& positives, const std::vector<Image>& negatives,
                                           const CalibrationOptions& opts) {
  if (!cfg_.uses_fecal()) throw DataError("preset '" + to_string(cfg_.preset) + "' has no fecal branch to calibrate");
  auto features = [&](const std::vector<Image>& patches) {
    Matrix out(static_cast<Index>(patches.size()), embed_dim());
    for (std::size_t i = 0; i < patches.size(); ++i)
      out.row(static_cast<Index>(i)) = encode_image(*fecal_backbone_, to_native(patches[i])).transpose();
    return out;
  };
  return calibrate_adapter(fecal_adapter_, features(positives), features(negatives), bank_, cfg_.aggregation, opts);
}

struct RaffNet::Trace {
  Vector backbone_out;
  std::unique_ptr<EncoderTape> tape;
  Matrix anchor_feats;    // A x D backbone features
  Matrix anchor_adapted;  // A x D adapter outputs, before normalization
  Matrix anchor_scores;   // A x P
  FusionState<double> state;
};

RaffNet::Trace RaffNet::run(const Image& image, const Matrix* anchor_feats, bool record) const {
  Trace t;
  const Image native = to_native(image);
  if (record && main_backbone_->differentiable()) {
    t.backbone_out = main_backbone_->encode(native, t.tape);
  } else {
    t.backbone_out = encode_image(*main_backbone_, native);
  }
  const Vector z_v = cfg_.uses_adapter() ? adapter_forward(main_adapter_, t.backbone_out) : t.backbone_out;

  if (!cfg_.uses_fecal()) {
    t.state.z_v = z_v;
    t.state.z_all = z_v;
    t.state.logits = classify(fusion_, z_v);
    return t;
  }

  if (anchor_feats) {
    if (anchor_feats->rows() != anchor_count() || anchor_feats->cols() != embed_dim())
      throw DimensionError("cached anchor features have the wrong shape");
    t.anchor_feats = *anchor_feats;
  } else {
    t.anchor_feats = anchor_features(image);
  }
  t.anchor_adapted.resize(t.anchor_feats.rows(), t.anchor_feats.cols());
  Matrix normalized(t.anchor_feats.rows(), t.anchor_feats.cols());
  for (Index a = 0; a < t.anchor_feats.rows(); ++a) {
    t.anchor_adapted.row(a) = adapter_forward(fecal_adapter_, t.anchor_feats.row(a).transpose()).transpose();
    normalized.row(a) = l2_normalize(t.anchor_adapted.row(a).transpose()).transpose();
  }
  t.anchor_scores = similarity_scores(normalized, bank_);
  const Vector z_f = aggregate(t.anchor_scores, cfg_.aggregation);
  t.state = fusion_forward(fusion_, z_v, z_f);
  return t;
}

Inference RaffNet::forward(const Image& image, const Matrix* anchor_feats) const {
  Trace t = run(image, anchor_feats, false);
  Inference out;
  out.predicted = predict(t.state.logits);
  out.state = std::move(t.state);
  out.anchor_scores = std::move(t.anchor_scores);
  return out;
}

double RaffNet::forward_backward(const Image& image, int label, RaffNet& grad, const Matrix* anchor_feats,
                                 const BackwardOptions& opts) const {
  const bool backbone_grad = opts.main_backbone && main_backbone_->differentiable();
  Trace t = run(image, anchor_feats, backbone_grad);
  const double loss = ce_loss(t.state.logits, label);
  const Vector d_logits = ce_loss_grad(t.state.logits, label);

  Vector d_zv;
  if (cfg_.uses_fecal()) {
    const FusionGrads<double> g = fusion_backward(fusion_, t.state, d_logits, grad.fusion_);
    d_zv = g.z_v;
    if (opts.fecal_adapter) {
      const Matrix d_scores = aggregate_backward(t.anchor_scores, cfg_.aggregation, g.z_f);
      const Matrix d_normalized = d_scores * bank_.embeddings;
      for (Index a = 0; a < t.anchor_feats.rows(); ++a) {
        const Vector d_adapted = l2_normalize_backward(t.anchor_adapted.row(a).transpose(),
                                                       d_normalized.row(a).transpose());
        adapter_backward(fecal_adapter_, t.anchor_feats.row(a).transpose(), d_adapted, grad.fecal_adapter_);
      }
    }
  } else {
    d_zv = fusion_.classifier.backward(t.state.z_all, d_logits, grad.fusion_.classifier);
  }

  const Vector d_backbone =
      cfg_.uses_adapter() ? adapter_backward(main_adapter_, t.backbone_out, d_zv, grad.main_adapter_) : d_zv;
  if (backbone_grad) main_backbone_->backward(*t.tape, d_backbone, *grad.main_backbone_);
  return loss;
}

template <typename Self, typename Visitor>
void RaffNet::visit_impl(Self& self, Visitor&& v) {
  using Ref = std::conditional_t<std::is_const_v<Self>, Eigen::Ref<const Matrix>, Eigen::Ref<Matrix>>;
  using Fn = std::conditional_t<std::is_const_v<Self>, ConstParamVisitor, ParamVisitor>;
  using Image_ = std::conditional_t<std::is_const_v<Self>, const ImageEncoder, ImageEncoder>;
  using Text_ = std::conditional_t<std::is_const_v<Self>, const TextEncoder, TextEncoder>;

  static_cast<Image_&>(*self.main_backbone_).visit_parameters(Fn([&](const std::string& n, Ref p) { v("main.backbone." + n, p); }));
  if (self.cfg_.uses_adapter()) {
    visit_linear(self.main_adapter_.down, "main.adapter.down", v);
    visit_linear(self.main_adapter_.up, "main.adapter.up", v);
  }
  if (self.cfg_.uses_fecal()) {
    static_cast<Image_&>(*self.fecal_backbone_).visit_parameters(Fn([&](const std::string& n, Ref p) { v("fecal.backbone." + n, p); }));
    visit_linear(self.fecal_adapter_.down, "fecal.adapter.down", v);
    visit_linear(self.fecal_adapter_.up, "fecal.adapter.up", v);
    static_cast<Text_&>(*self.text_).visit_parameters(Fn([&](const std::string& n, Ref p) { v("text.encoder." + n, p); }));
    visit_linear(self.fusion_.projection, "fusion.projection", v);
    visit_linear(self.fusion_.gate1, "fusion.gate1", v);
    visit_linear(self.fusion_.gate2, "fusion.gate2", v);
  }
  visit_linear(self.fusion_.classifier, "head.classifier", v);
}

void RaffNet::visit_parameters(const ParamVisitor& v) { visit_impl(*this, v); }
void RaffNet::visit_parameters(const ConstParamVisitor& v) const { visit_impl(*this, v); }

std::vector<ParamView> RaffNet::parameters() {
  std::vector<ParamView> out;
  visit_parameters(ParamVisitor([&](const std::string& n, Eigen::Ref<Matrix> p) {
    out.push_back({n, p.data(), p.rows(), p.cols()});
  }));
  return out;
}

std::vector<ConstParamView> RaffNet::parameters() const {
  std::vector<ConstParamView> out;
  visit_parameters(ConstParamVisitor([&](const std::string& n, Eigen::Ref<const Matrix> p) {
    out.push_back({n, p.data(), p.rows(), p.cols()});
  }));
  return out;
}

std::vector<std::string> RaffNet::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& p : parameters()) out.push_back(p.name);
  return out;
}

RaffNet RaffNet::zeros_like() const {
  RaffNet out(*this);
  out.set_zero();
  return out;
}

void RaffNet::set_zero() {
  for (auto& p : parameters()) p.map().setZero();
}

void RaffNet::add(const RaffNet& other, double scale) {
  auto mine = parameters();
  const auto theirs = other.parameters();
  if (mine.size() != theirs.size()) throw DimensionError("parameter registries differ");
  for (std::size_t i = 0; i < mine.size(); ++i) mine[i].map() += scale * theirs[i].map();
}

std::uint64_t RaffNet::checksum(std::string_view prefix) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : parameters()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    h = fnv1a(p.name, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.data), sizeof(double) * p.rows * p.cols), h);
  }
  return h;
}

}  // namespace raffnet
