#include "raffnet/training.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "raffnet/rng.hpp"
#include "raffnet/tensor_io.hpp"

namespace raffnet {

namespace {

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

enum class Role { kBackbone, kNew, kFrozen };

Role role_of(const std::string& name, const ModelConfig& model, const TrainConfig& cfg) {
  if (starts_with(name, "main.backbone.")) {
    const bool frozen = cfg.freeze.main_backbone || model.preset != Preset::kFull;
    return frozen ? Role::kFrozen : Role::kBackbone;
  }
  if (starts_with(name, "fecal.backbone.") || starts_with(name, "text.encoder.")) return Role::kFrozen;
  if (starts_with(name, "fecal.adapter.")) return cfg.freeze.fecal_adapter ? Role::kFrozen : Role::kNew;
  if (starts_with(name, "main.adapter.") || starts_with(name, "fusion.") || starts_with(name, "head."))
    return Role::kNew;
  throw DataError("unregistered parameter '" + name + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0) throw DataError("epochs must be positive");
  if (batch_size <= 0) throw DataError("batch_size must be positive");
  if (!(lr_backbone >= 0 && lr_new >= 0)) throw DataError("learning rates must be non-negative");
  if (!(weight_decay >= 0)) throw DataError("weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw DataError("betas must lie in [0, 1)");
  if (!(eps > 0)) throw DataError("eps must be positive");
  if (!freeze.fecal_backbone || !freeze.text_encoder)
    throw DataError("the fecal-branch backbone and the text encoder are always frozen");
  augmentation.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"lr_backbone", c.lr_backbone},
          {"lr_new", c.lr_new},
          {"weight_decay", c.weight_decay},
          {"betas", {c.beta1, c.beta2}},
          {"eps", c.eps},
          {"augmentation", to_json(c.augmentation)},
          {"freeze",
           {{"fecal_backbone", c.freeze.fecal_backbone},
            {"text_encoder", c.freeze.text_encoder},
            {"main_backbone", c.freeze.main_backbone},
            {"fecal_adapter", c.freeze.fecal_adapter}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.lr_backbone = j.value("lr_backbone", c.lr_backbone);
    c.lr_new = j.value("lr_new", c.lr_new);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
      c.beta1 = j.at("betas").at(0).get<double>();
      c.beta2 = j.at("betas").at(1).get<double>();
    }
    c.eps = j.value("eps", c.eps);
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      c.augmentation = a.is_string() && a.get<std::string>() == "none" ? AugmentSpec::none() : augment_spec_from_json(a);
    }
    if (j.contains("freeze")) {
      const auto& f = j.at("freeze");
      c.freeze.fecal_backbone = f.value("fecal_backbone", c.freeze.fecal_backbone);
      c.freeze.text_encoder = f.value("text_encoder", c.freeze.text_encoder);
      c.freeze.main_backbone = f.value("main_backbone", c.freeze.main_backbone);
      c.freeze.fecal_adapter = f.value("fecal_adapter", c.freeze.fecal_adapter);
    }
    if (j.contains("main_backbone_trainable")) c.freeze.main_backbone = !j.at("main_backbone_trainable").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ParamGroup> param_groups(const RaffNet& model, const TrainConfig& cfg) {
  ParamGroup backbone{"backbone", {}, cfg.lr_backbone, cfg.weight_decay};
  ParamGroup fresh{"new", {}, cfg.lr_new, cfg.weight_decay};
  for (const auto& name : model.parameter_names()) {
    switch (role_of(name, model.config(), cfg)) {
      case Role::kBackbone: backbone.names.push_back(name); break;
      case Role::kNew: fresh.names.push_back(name); break;
      case Role::kFrozen: break;
    }
  }
  return {backbone, fresh};
}

std::vector<std::string> frozen_parameters(const RaffNet& model, const TrainConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& name : model.parameter_names())
    if (role_of(name, model.config(), cfg) == Role::kFrozen) out.push_back(name);
  return out;
}

AdamW::AdamW(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(RaffNet& model, const RaffNet& grad) {
  std::map<std::string, ParamView> params;
  for (auto& p : model.parameters()) params.emplace(p.name, p);
  std::map<std::string, ConstParamView> grads;
  for (const auto& g : grad.parameters()) grads.emplace(g.name, g);

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& group : groups_) {
    for (const auto& name : group.names) {
      auto pit = params.find(name);
      auto git = grads.find(name);
      if (pit == params.end() || git == grads.end()) throw DataError("optimizer: unknown parameter '" + name + "'");
      auto p = pit->second.map();
      const auto g = git->second.map();
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Matrix::Zero(p.rows(), p.cols());
        st.v = Matrix::Zero(p.rows(), p.cols());
      }
      st.m = beta1_ * st.m + (1.0 - beta1_) * g;
      st.v = beta2_ * st.v + (1.0 - beta2_) * g.cwiseAbs2();
      p *= 1.0 - group.lr * group.weight_decay;
      p.array() -= group.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + eps_);
    }
  }
}

Checkpoint snapshot(const RaffNet& model) {
  Checkpoint c;
  for (const auto& p : model.parameters()) c.parameters.emplace(p.name, p.map());
  c.model_config = to_json(model.config());
  c.seed = model.config().seed;
  return c;
}

void restore(RaffNet& model, const Checkpoint& ckpt) {
  const auto names = model.parameter_names();
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!ckpt.parameters.count(n)) missing.push_back(n);
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing parameters:";
    for (const auto& n : missing) msg += " " + n;
    throw DataError(msg);
  }
  const std::set<std::string> known(names.begin(), names.end());
  for (const auto& [n, m] : ckpt.parameters)
    if (!known.count(n)) throw DataError("checkpoint has unexpected parameter '" + n + "'");

  for (auto& p : model.parameters()) {
    const Matrix& src = ckpt.parameters.at(p.name);
    if (src.rows() != p.rows || src.cols() != p.cols)
      throw DimensionError("parameter '" + p.name + "' has shape " + std::to_string(src.rows()) + "x" +
                           std::to_string(src.cols()) + " in the checkpoint but " + std::to_string(p.rows) + "x" +
                           std::to_string(p.cols) + " in the model");
  }
  for (auto& p : model.parameters()) p.map() = ckpt.parameters.at(p.name);
  model.refresh_prompt_bank();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::json meta = {{"format_version", kCheckpointFormatVersion},
                               {"epoch", ckpt.epoch},
                               {"val_accuracy", ckpt.val_accuracy},
                               {"config_hash", ckpt.config_hash},
                               {"rng_state", ckpt.rng_state},
                               {"seed", ckpt.seed},
                               {"model", ckpt.model_config}};
  {
    std::ofstream out(dir / "metadata.json", std::ios::binary);
    out << meta.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + (dir / "metadata.json").string());
  }
  write_tensors(ckpt.parameters, dir / "params.bin");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint c;
  std::ifstream meta_in(dir / "metadata.json");
  if (!meta_in) throw DataError("cannot open " + (dir / "metadata.json").string());
  try {
    const auto meta = nlohmann::json::parse(meta_in);
    const int version = meta.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw DataError("unsupported checkpoint format version " + std::to_string(version));
    c.epoch = meta.at("epoch").get<int>();
    c.val_accuracy = meta.at("val_accuracy").get<double>();
    c.config_hash = meta.at("config_hash").get<std::string>();
    c.rng_state = meta.value("rng_state", "");
    c.seed = meta.value("seed", std::uint64_t{0});
    c.model_config = meta.at("model");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }

  c.parameters = read_tensors(dir / "params.bin");
  return c;
}

RaffNet load_model(const std::filesystem::path& dir) {
  const Checkpoint c = load_checkpoint(dir);
  RaffNet model(model_config_from_json(c.model_config));
  restore(model, c);
  return model;
}

std::uint64_t sample_seed(std::uint64_t seed, int epoch, const std::string& image_id) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), fnv1a(image_id));
}

std::string config_hash(const ModelConfig& model, const TrainConfig& train) {
  return hex64(fnv1a(to_json(train).dump(), fnv1a(to_json(model).dump())));
}

std::size_t best_epoch_index(const std::vector<double>& val_accuracies) {
  if (val_accuracies.empty()) throw DataError("no epochs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_accuracies.size(); ++i)
    if (val_accuracies[i] > val_accuracies[best]) best = i;
  return best;
}

TrainResult train(const DatasetManifest& manifest, RaffNet& model, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    if (manifest.samples[i].split == Split::kTrain) train_idx.push_back(i);
  if (train_idx.empty()) throw DataError("training split is empty");
  if (manifest.split(Split::kVal).empty()) throw DataError("validation split is empty");

  const auto groups = param_groups(model, cfg);
  AdamW opt(groups, cfg.beta1, cfg.beta2, cfg.eps);
  BackwardOptions opts;
  opts.main_backbone = !groups[0].names.empty();
  opts.fecal_adapter = !cfg.freeze.fecal_adapter;

  ImageStore images(manifest);
  FeatureCache cache;
  const bool fecal = model.config().uses_fecal();
  const bool identity = cfg.augmentation.is_identity();
  const std::string hash = config_hash(model.config(), cfg);

  const auto batch_cap = static_cast<std::size_t>(cfg.batch_size);
  std::vector<RaffNet> grads;
  grads.reserve(std::min(batch_cap, train_idx.size()));
  for (std::size_t k = 0; k < std::min(batch_cap, train_idx.size()); ++k) grads.push_back(model.zeros_like());
  RaffNet total = model.zeros_like();

  TrainResult result;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_cap) {
      const std::size_t b = std::min(batch_cap, order.size() - start);
      std::vector<double> losses(b, 0.0);
      std::vector<std::string> errors(b);
      std::vector<char> diverged(b, 0);
#pragma omp parallel for schedule(dynamic)
      for (std::int64_t k = 0; k < static_cast<std::int64_t>(b); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        try {
          const std::size_t i = order[start + kk];
          const auto& s = manifest.samples[i];
          grads[kk].set_zero();
          if (identity) {
            const Image img = images.get(i);
            if (fecal) {
              const Matrix feats = cache.get(model, images, i);
              losses[kk] = model.forward_backward(img, s.label, grads[kk], &feats, opts);
            } else {
              losses[kk] = model.forward_backward(img, s.label, grads[kk], nullptr, opts);
            }
          } else {
            const Image img = augment(images.get(i), cfg.augmentation, sample_seed(cfg.seed, epoch, s.image_id));
            losses[kk] = model.forward_backward(img, s.label, grads[kk], nullptr, opts);
          }
        } catch (const NonFiniteError& e) {
          diverged[kk] = 1;
          errors[kk] = e.what();
        } catch (const std::exception& e) {
          errors[kk] = e.what();
        }
      }
      for (std::size_t k = 0; k < b; ++k) {
        if (diverged[k] || (errors[k].empty() && !std::isfinite(losses[k])))
          throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
        if (!errors[k].empty()) throw DataError(errors[k]);
      }

      total.set_zero();
      for (std::size_t k = 0; k < b; ++k) {
        total.add(grads[k], 1.0 / static_cast<double>(b));
        loss_sum += losses[k];
      }
      opt.step(model, total);
      ++step;
    }

    const Evaluation val = evaluate(model, manifest, Split::kVal, images, fecal ? &cache : nullptr);
    EpochStats stats{epoch, loss_sum / static_cast<double>(order.size()), val.report.macro_avg / 100.0};
    if (result.history.empty() || stats.val_accuracy > result.best.val_accuracy) {
      result.best = snapshot(model);
      result.best.epoch = epoch;
      result.best.val_accuracy = stats.val_accuracy;
      result.best.config_hash = hash;
      result.best.rng_state = hex64(rng.state());
      result.best.seed = cfg.seed;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_macro_acc\n";
  char buf[96];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.6f\n", h.epoch, h.train_loss, h.val_accuracy);
    out << buf;
  }
  return out.str();
}

}  // namespace raffnet
