#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "raffnet/augment.hpp"
#include "raffnet/data.hpp"
#include "raffnet/evaluation.hpp"
#include "raffnet/model.hpp"
#include "raffnet/store.hpp"
#include "raffnet/tensor_io.hpp"

namespace raffnet {

struct FreezeFlags {
  bool fecal_backbone = true;
  bool text_encoder = true;
  bool main_backbone = false;
  bool fecal_adapter = false;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double lr_backbone = 1e-5;
  double lr_new = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  AugmentSpec augmentation;
  FreezeFlags freeze;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ParamGroup {
  std::string label;
  std::vector<std::string> names;
  double lr = 0.0;
  double weight_decay = 0.0;
};

// Two groups, backbone then new layers; frozen parameters appear in neither.
std::vector<ParamGroup> param_groups(const RaffNet& model, const TrainConfig& cfg);
std::vector<std::string> frozen_parameters(const RaffNet& model, const TrainConfig& cfg);

// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(RaffNet& model, const RaffNet& grad);
  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  std::vector<ParamGroup> groups_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

struct Checkpoint {
  TensorMap parameters;
  int epoch = 0;
  double val_accuracy = 0.0;  // macro-averaged, in [0, 1]
  std::string config_hash;
  std::string rng_state;
  nlohmann::json model_config;
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

Checkpoint snapshot(const RaffNet& model);
// Copies parameters into model; throws on missing names or shape mismatch.
void restore(RaffNet& model, const Checkpoint& ckpt);
// Directory holding metadata.json and params.bin.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
RaffNet load_model(const std::filesystem::path& dir);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStats> history;
};

std::uint64_t sample_seed(std::uint64_t seed, int epoch, const std::string& image_id);
std::string config_hash(const ModelConfig& model, const TrainConfig& train);

// Best-by-validation selection; ties keep the earlier epoch.
std::size_t best_epoch_index(const std::vector<double>& val_accuracies);

using EpochCallback = std::function<void(const EpochStats&)>;

TrainResult train(const DatasetManifest& manifest, RaffNet& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace raffnet
