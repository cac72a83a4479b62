#include "raffnet/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "raffnet/config.hpp"
#include "raffnet/data.hpp"
#include "raffnet/evaluation.hpp"
#include "raffnet/synthetic.hpp"
#include "raffnet/training.hpp"

namespace raffnet::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) throw DataError("--ratios takes three comma-separated values");
    try {
      r[i++] = std::stod(item);
    } catch (const std::exception&) {
      throw DataError("bad ratio '" + item + "'");
    }
  }
  if (i != 3) throw DataError("--ratios takes three comma-separated values");
  return r;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string fmt(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct PrepareArgs {
  std::string annotations;
  std::string out;
  double blur_threshold = 0.0;
  std::string ratios = "0.8,0.1,0.1";
  std::uint64_t seed = 0;
};

int prepare(const PrepareArgs& a, std::ostream& out) {
  const fs::path ann_path = a.annotations;
  const fs::path src_root = fs::absolute(ann_path).parent_path();
  const fs::path out_dir = fs::absolute(a.out).lexically_normal();
  const auto ratios = parse_ratios(a.ratios);
  if (!(a.blur_threshold >= 0)) throw DataError("--blur-threshold must be >= 0");

  const auto records = load_annotations(ann_path);
  const ConsensusResult consensus = consensus_filter(records);
  const BlurFilterResult blur = filter_blurred(consensus.retained, a.blur_threshold, src_root);
  if (blur.retained.empty()) throw DataError("no images survive curation");

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.provenance = "curated from " + ann_path.filename().string() + ": unanimous rater agreement, blur threshold " +
                        fmt(a.blur_threshold, 6) + ", subject split " + a.ratios + ", seed " + std::to_string(a.seed);
  for (ImageSample s : blur.retained) {
    s.image_path = (src_root / s.image_path).lexically_normal().lexically_relative(out_dir).generic_string();
    manifest.samples.push_back(std::move(s));
  }
  manifest.recount();
  manifest = subject_disjoint_split(manifest, ratios, a.seed);
  fs::create_directories(out_dir);
  write_manifest(manifest, out_dir / "manifest.jsonl");

  json report;
  report["input"] = records.size();
  report["dropped_consensus"] = consensus.dropped.size();
  report["dropped_consensus_ids"] = json::array();
  for (const auto& r : consensus.dropped) report["dropped_consensus_ids"].push_back(r.image_id);
  report["blur_threshold"] = a.blur_threshold;
  report["dropped_blur"] = blur.dropped.size();
  report["dropped_blur_ids"] = json::array();
  for (const auto& s : blur.dropped) report["dropped_blur_ids"].push_back(s.image_id);
  report["borderline_blur_ids"] = blur.borderline;
  report["retained"] = manifest.samples.size();
  report["per_class_counts"] = manifest.per_class_counts;
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::set<std::string> subjects;
    const auto members = manifest.split(sp);
    for (const auto* s : members) subjects.insert(s->subject_id);
    report["splits"][to_string(sp)] = {{"subjects", subjects.size()}, {"images", members.size()}};
  }
  report["seed"] = a.seed;
  write_text(out_dir / "curation_report.json", report.dump(2) + "\n");

  out << "input: " << records.size() << "\n"
      << "dropped_consensus: " << consensus.dropped.size() << "\n"
      << "dropped_blur: " << blur.dropped.size() << "\n"
      << "borderline_blur: " << blur.borderline.size() << "\n"
      << "retained: " << manifest.samples.size() << "\n"
      << "manifest: " << (out_dir / "manifest.jsonl").string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string preset;
  int anchors = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.preset.empty()) cfg.model.preset = parse_preset(a.preset);
  if (a.anchors > 0) cfg.model.anchors = anchor_preset(a.anchors);
  if (a.seed) set_seed(cfg, *a.seed);
  if (!a.out.empty()) cfg.output = fs::absolute(a.out).lexically_normal();

  const auto start = std::chrono::steady_clock::now();
  std::ostringstream log;
  log << "start " << timestamp() << " seed " << cfg.seed << "\n";

  const DatasetManifest manifest = load_manifest(cfg.manifest);
  RaffNet model(cfg.model);
  if (const auto c = calibrate(model, cfg.calibration, cfg.seed); c && !a.quiet)
    out << "calibration loss " << fmt(c->initial_loss, 4) << " -> " << fmt(c->final_loss, 4) << " (positive "
        << fmt(c->positive_mean, 3) << ", negative " << fmt(c->negative_mean, 3) << ")\n";

  const TrainResult result = train(manifest, model, cfg.train, [&](const EpochStats& s) {
    if (!a.quiet)
      out << "epoch " << s.epoch << " train_loss " << fmt(s.train_loss, 6) << " val_macro_acc "
          << fmt(s.val_accuracy, 4) << "\n";
    log << "epoch " << s.epoch << " done " << timestamp() << "\n";
  });

  fs::create_directories(cfg.output);
  save_checkpoint(result.best, cfg.output / "checkpoint");
  write_text(cfg.output / "history.csv", history_csv(result.history));
  json resolved = to_json(cfg);
  resolved.erase("output");
  write_text(cfg.output / "config.json", resolved.dump(2) + "\n");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "end " << timestamp() << " elapsed_s " << fmt(secs, 2) << "\n";
  write_text(cfg.output / "run.log", log.str());

  out << "best epoch " << result.best.epoch << " val_macro_acc " << fmt(result.best.val_accuracy, 4) << "\n"
      << "checkpoint " << (cfg.output / "checkpoint").string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string predictions;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const RaffNet model = load_model(a.checkpoint);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const Split split = parse_split(a.split);
  ImageStore images(manifest);
  FeatureCache cache;
  const Evaluation ev = evaluate(model, manifest, split, images, &cache);
  const std::string text = to_json(ev.report).dump(2) + "\n";
  out << text;
  if (!a.out.empty()) write_text(a.out, text);
  if (!a.predictions.empty()) {
    std::ostringstream csv;
    csv << "image_id,label,predicted,logit0,logit1,logit2,logit3\n";
    csv << std::setprecision(17);
    for (const auto& p : ev.predictions) {
      csv << p.image_id << ',' << p.label << ',' << p.predicted;
      for (Index k = 0; k < p.logits.size(); ++k) csv << ',' << p.logits(k);
      csv << '\n';
    }
    write_text(a.predictions, csv.str());
  }
  return kOk;
}

struct ScoreArgs {
  std::string checkpoint;
  std::vector<std::string> images;
  bool explain = false;
};

int score_cmd(const ScoreArgs& a, std::ostream& out) {
  const RaffNet model = load_model(a.checkpoint);
  for (const auto& path : a.images) {
    const Image img = read_image(path);
    const Inference inf = model.forward(img);
    json j;
    j["image_id"] = fs::path(path).stem().string();
    j["logits"] = std::vector<double>(inf.state.logits.data(), inf.state.logits.data() + inf.state.logits.size());
    j["predicted"] = inf.predicted;
    if (inf.state.alpha.size() > 0) {
      j["alpha_mean"] = inf.state.alpha.mean();
      const Vector& zf = inf.state.z_f;
      std::vector<Index> order(static_cast<std::size_t>(zf.size()));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(), [&](Index l, Index r) { return zf(l) > zf(r); });
      json top = json::array();
      for (std::size_t k = 0; k < std::min<std::size_t>(5, order.size()); ++k) top.push_back({order[k], zf(order[k])});
      j["zf_top_anchors"] = top;
    } else {
      j["alpha_mean"] = nullptr;
      j["zf_top_anchors"] = json::array();
    }
    if (a.explain && inf.anchor_scores.size() > 0) {
      j["prompts"] = model.prompt_bank().prompts;
      json anchors = json::array();
      for (Index k = 0; k < inf.anchor_scores.rows(); ++k) {
        json box = to_json(model.anchors()[static_cast<std::size_t>(k)]);
        box["index"] = k;
        const auto row = inf.anchor_scores.row(k);
        std::vector<double> scores;
        for (Index p = 0; p < row.size(); ++p) scores.push_back(row(p));
        box["scores"] = scores;
        box["z_f"] = inf.state.z_f(k);
        anchors.push_back(box);
      }
      j["anchors"] = anchors;
    }
    out << j.dump() << "\n";
  }
  return kOk;
}

struct StatsArgs {
  std::string manifest;
  std::string backend = "toy-vit-d16";
  std::uint64_t seed = 0;
  std::string split = "all";
  std::string distance = "centroid";
  std::string out;
  std::string import_2d;
};

std::map<std::string, std::array<double, 2>> read_projection(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::array<double, 2>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() < 3) throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected image_id,x,y");
    try {
      out[cells[0]] = {std::stod(cells[1]), std::stod(cells[2])};
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": non-numeric coordinate");
    }
  }
  return out;
}

int stats_cmd(const StatsArgs& a, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(a.manifest);
  std::vector<const ImageSample*> chosen;
  if (a.split == "all") {
    for (const auto& s : manifest.samples) chosen.push_back(&s);
  } else {
    chosen = manifest.split(parse_split(a.split));
  }
  if (chosen.size() < 3) throw DataError("stats need at least 3 images");

  const DistanceMode mode = a.distance == "centroid"    ? DistanceMode::kCentroid
                            : a.distance == "all-pairs" ? DistanceMode::kAllPairs
                                                        : throw DataError("--distance must be centroid or all-pairs");
  const Backend backend = make_backend(a.backend, a.seed);
  const auto in = backend.image->native_input();
  Matrix features(static_cast<Index>(chosen.size()), backend.image->embed_dim());
  std::vector<int> labels;
  std::vector<std::string> errors(chosen.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(chosen.size()); ++i) {
    try {
      const Image img = read_image(manifest.resolve(*chosen[static_cast<std::size_t>(i)]));
      features.row(i) = encode_image(*backend.image, to_native(img, in)).transpose();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);

  DatasetStats stats;
  std::set<std::string> subjects;
  for (const auto* s : chosen) {
    labels.push_back(s->label);
    ++stats.per_class_counts[static_cast<std::size_t>(s->label)];
    subjects.insert(s->subject_id);
  }
  stats.n_subjects = subjects.size();
  std::tie(stats.intra_dist, stats.inter_dist) = intra_inter_distance(features, labels, mode);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  const std::string csv = stats_csv(stats);
  write_text(out_dir / "stats.csv", csv);
  out << csv;

  std::ostringstream proj;
  proj << "image_id,x,y,label\n" << std::setprecision(9);
  if (a.import_2d.empty()) {
    const Matrix xy = embed_2d(features);
    for (std::size_t i = 0; i < chosen.size(); ++i)
      proj << chosen[i]->image_id << ',' << xy(static_cast<Index>(i), 0) << ',' << xy(static_cast<Index>(i), 1) << ','
           << chosen[i]->label << '\n';
  } else {
    const auto coords = read_projection(a.import_2d);
    for (const auto* s : chosen) {
      auto it = coords.find(s->image_id);
      if (it == coords.end()) throw DataError("imported projection lacks image '" + s->image_id + "'");
      proj << s->image_id << ',' << it->second[0] << ',' << it->second[1] << ',' << s->label << '\n';
    }
  }
  write_text(out_dir / "embedding_2d.csv", proj.str());
  return kOk;
}

struct AnchorArgs {
  std::string action = "count";
  int count = 0;
  std::string config;
};

int anchors_cmd(const AnchorArgs& a, std::ostream& out) {
  AnchorConfig cfg = default_anchor_config();
  if (!a.config.empty() && a.count > 0) throw DataError("use either --anchors or --config");
  if (a.count > 0) cfg = anchor_preset(a.count);
  if (!a.config.empty()) cfg = load_anchor_config(a.config);
  const auto boxes = generate_anchors(cfg);
  if (a.action == "count") {
    out << boxes.size() << "\n";
  } else {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      json j = {{"index", i}};
      j.update(to_json(boxes[i]));
      out << j.dump() << "\n";
    }
  }
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> files;
  std::string format = "markdown";
  std::string names;
};

int report_cmd(const ReportArgs& a, std::ostream& out) {
  const ReportFormat format = parse_report_format(a.format);
  std::vector<std::string> names = split_commas(a.names);
  if (!a.names.empty() && names.size() != a.files.size()) throw DataError("--names needs one name per report");
  std::vector<NamedReport> reports;
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    std::ifstream in(a.files[i]);
    if (!in) throw DataError("cannot open " + a.files[i]);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(a.files[i] + ": " + e.what());
    }
    reports.emplace_back(a.names.empty() ? fs::path(a.files[i]).stem().string() : names[i], eval_report_from_json(j));
  }
  out << render_report(reports, format);
  return kOk;
}

struct SynthArgs {
  std::string kind = "area";
  std::string out;
  int images = 400;
  int size = 64;
  int subjects = 20;
  std::uint64_t seed = 0;
  std::string ratios = "0.6,0.2,0.2";
  double disagreement = 0.1;
  double blurred = 0.0;
};

int synth_cmd(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec;
  spec.kind = parse_synth_kind(a.kind);
  spec.images = a.images;
  spec.size = a.size;
  spec.subjects = a.subjects;
  spec.seed = a.seed;
  spec.ratios = parse_ratios(a.ratios);
  spec.disagreement = a.disagreement;
  spec.blurred = a.blurred;
  if (!(spec.disagreement >= 0 && spec.disagreement <= 1 && spec.blurred >= 0 && spec.blurred <= 1))
    throw DataError("--disagreement and --blurred must lie in [0, 1]");
  const SynthOutput res = write_synthetic(spec, a.out);

  const json config = {{"manifest", "manifest.jsonl"},
                       {"output", "run"},
                       {"seed", a.seed},
                       {"model", {{"backend", "toy-vit-d16"}, {"preset", "full"}, {"anchors", "default"}}},
                       {"train", {{"epochs", 20}, {"batch_size", 4}, {"augmentation", "none"}}},
                       {"calibration", {{"enabled", true}}}};
  write_text(fs::path(a.out) / "config.json", config.dump(2) + "\n");
  out << "images: " << res.manifest.samples.size() << "\n"
      << "manifest: " << res.manifest_path.string() << "\n"
      << "annotations: " << res.annotations_path.string() << "\n"
      << "config: " << (fs::path(a.out) / "config.json").string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-aware fusion network for bowel preparation scoring", "raffnet"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "Curate annotations into a split manifest");
  c_prep->add_option("--annotations", prep.annotations, "Annotation JSON Lines (rater_scores per image)")->required();
  c_prep->add_option("--out", prep.out, "Output directory for manifest.jsonl and curation_report.json")->required();
  c_prep->add_option("--blur-threshold", prep.blur_threshold, "Drop images whose Laplacian variance is below this")
      ->capture_default_str();
  c_prep->add_option("--ratios", prep.ratios, "train,val,test subject ratios")->capture_default_str();
  c_prep->add_option("--seed", prep.seed, "Split seed")->capture_default_str();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train from a run config");
  c_train->add_option("--config", tr.config, "Run config JSON")->required();
  c_train->add_option("--preset", tr.preset, "Override preset: clip-base, trans-base or full");
  c_train->add_option("--anchors", tr.anchors, "Override anchors with a preset count (22,37,52,85,180,353,564)");
  c_train->add_option("--seed", tr.seed, "Override the run seed");
  c_train->add_option("--out", tr.out, "Override the output directory");
  c_train->add_flag("--quiet", tr.quiet, "Print only the final summary");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  c_eval->add_option("--manifest", ev.manifest, "Manifest JSON Lines")->required();
  c_eval->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  c_eval->add_option("--out", ev.out, "Also write the report JSON here");
  c_eval->add_option("--predictions", ev.predictions, "Write per-image predictions CSV here");

  ScoreArgs sc;
  auto* c_score = app.add_subcommand("score", "Score images with a checkpoint, one JSON line each");
  c_score->add_option("--checkpoint", sc.checkpoint, "Checkpoint directory")->required();
  c_score->add_option("images", sc.images, "Image files")->required();
  c_score->add_flag("--explain", sc.explain, "Include per-anchor prompt similarities");

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "Dataset distance statistics and 2-D export");
  c_stats->add_option("--manifest", st.manifest, "Manifest JSON Lines")->required();
  c_stats->add_option("--backend", st.backend, "Feature backend")->capture_default_str();
  c_stats->add_option("--seed", st.seed, "Backend seed")->capture_default_str();
  c_stats->add_option("--split", st.split, "all, train, val or test")->capture_default_str();
  c_stats->add_option("--distance", st.distance, "centroid or all-pairs inter-class distance")->capture_default_str();
  c_stats->add_option("--out", st.out, "Output directory for stats.csv and embedding_2d.csv")->required();
  c_stats->add_option("--import-2d", st.import_2d, "CSV image_id,x,y with an external 2-D projection");

  AnchorArgs an;
  auto* c_anchors = app.add_subcommand("anchors", "Inspect generated anchors");
  c_anchors->add_option("action", an.action, "dump (JSON Lines) or count")
      ->check(CLI::IsMember({"dump", "count"}))
      ->capture_default_str();
  c_anchors->add_option("--anchors", an.count, "Preset count (22,37,52,85,180,353,564)");
  c_anchors->add_option("--config", an.config, "Anchor config JSON");

  ReportArgs rp;
  auto* c_report = app.add_subcommand("report", "Render EvalReport files as a table");
  c_report->add_option("reports", rp.files, "EvalReport JSON files")->required();
  c_report->add_option("--format", rp.format, "markdown, csv or json")->capture_default_str();
  c_report->add_option("--names", rp.names, "Comma-separated row names (default: file stems)");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic dataset with a ready run config");
  c_synth->add_option("--kind", sy.kind, "area or small-blob")->capture_default_str();
  c_synth->add_option("--out", sy.out, "Output directory")->required();
  c_synth->add_option("--images", sy.images, "Image count")->capture_default_str();
  c_synth->add_option("--size", sy.size, "Image side in pixels")->capture_default_str();
  c_synth->add_option("--subjects", sy.subjects, "Subject count")->capture_default_str();
  c_synth->add_option("--seed", sy.seed, "Generator and split seed")->capture_default_str();
  c_synth->add_option("--ratios", sy.ratios, "train,val,test subject ratios")->capture_default_str();
  c_synth->add_option("--disagreement", sy.disagreement, "Fraction of annotations with a dissenting rater")
      ->capture_default_str();
  c_synth->add_option("--blurred", sy.blurred, "Fraction of images written blurred")->capture_default_str();

  std::vector<const char*> argv{"raffnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_prep->parsed()) return prepare(prep, out);
    if (c_train->parsed()) return train_cmd(tr, out);
    if (c_eval->parsed()) return eval_cmd(ev, out);
    if (c_score->parsed()) return score_cmd(sc, out);
    if (c_stats->parsed()) return stats_cmd(st, out);
    if (c_anchors->parsed()) return anchors_cmd(an, out);
    if (c_report->parsed()) return report_cmd(rp, out);
    if (c_synth->parsed()) return synth_cmd(sy, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace raffnet::cli
