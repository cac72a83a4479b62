#include "raffnet/config.hpp"

#include <algorithm>
#include <fstream>

#include "raffnet/synthetic.hpp"

namespace raffnet {

nlohmann::json to_json(const CalibrationSpec& c) {
  return {{"enabled", c.enabled},
          {"patches", c.patches},
          {"steps", c.options.steps},
          {"lr", c.options.lr},
          {"center", c.options.center},
          {"temperature", c.options.temperature}};
}

CalibrationSpec calibration_spec_from_json(const nlohmann::json& j) {
  CalibrationSpec c;
  c.enabled = j.value("enabled", c.enabled);
  c.patches = j.value("patches", c.patches);
  c.options.steps = j.value("steps", c.options.steps);
  c.options.lr = j.value("lr", c.options.lr);
  c.options.center = j.value("center", c.options.center);
  c.options.temperature = j.value("temperature", c.options.temperature);
  if (c.patches < 1 || c.options.steps < 0 || !(c.options.lr > 0)) throw DataError("invalid calibration settings");
  return c;
}

AnchorConfig resolve_anchors(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (j.is_number_integer()) return anchor_preset(j.get<int>());
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "default") return default_anchor_config();
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return anchor_preset(std::stoi(s));
    return load_anchor_config(base_dir / s);
  }
  if (j.is_object()) return anchor_config_from_json(j);
  throw DataError("anchors must be \"default\", a preset count, a file path or an object");
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  try {
    if (!j.is_object()) throw DataError("run config must be a JSON object");
    cfg.manifest = std::filesystem::absolute(base_dir / j.at("manifest").get<std::string>()).lexically_normal();
    cfg.output = std::filesystem::absolute(base_dir / j.value("output", std::string("run"))).lexically_normal();
    const auto& m = j.contains("model") ? j.at("model") : j;
    cfg.model.backend = m.value("backend", cfg.model.backend);
    if (m.contains("preset")) cfg.model.preset = parse_preset(m.at("preset").get<std::string>());
    if (m.contains("anchors")) cfg.model.anchors = resolve_anchors(m.at("anchors"), base_dir);
    cfg.model.prompts = m.value("prompts", cfg.model.prompts);
    if (m.contains("aggregation")) cfg.model.aggregation = parse_aggregation(m.at("aggregation").get<std::string>());
    cfg.model.share_backbone_init = m.value("share_backbone_init", cfg.model.share_backbone_init);
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("calibration")) cfg.calibration = calibration_spec_from_json(j.at("calibration"));
    set_seed(cfg, j.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed run config: ") + e.what());
  }
  cfg.train.validate();
  cfg.model.anchors.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open run config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("run config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, std::filesystem::absolute(path).parent_path());
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json model = to_json(cfg.model);
  model.erase("seed");
  return {{"manifest", cfg.manifest.string()},
          {"output", cfg.output.string()},
          {"seed", cfg.seed},
          {"model", model},
          {"train", to_json(cfg.train)},
          {"calibration", to_json(cfg.calibration)}};
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
}

std::optional<CalibrationResult> calibrate(RaffNet& model, const CalibrationSpec& spec, std::uint64_t seed) {
  if (!spec.enabled || !model.config().uses_fecal()) return std::nullopt;
  const auto in = model.main_backbone().native_input();
  const PatchSet patches =
      calibration_patches(spec.patches, static_cast<int>(in.height), mix_seed(seed, fnv1a("calibration")));
  return model.calibrate_fecal(patches.positives, patches.negatives, spec.options);
}

}  // namespace raffnet
