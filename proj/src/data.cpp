#include "raffnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "raffnet/rng.hpp"

namespace raffnet {

using ojson = nlohmann::ordered_json;

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void fail_line(std::size_t line, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + msg);
}

std::string require_string(const ojson& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail_line(line, std::string("missing key '") + key + "'");
  if (!it->is_string()) fail_line(line, std::string("key '") + key + "' must be a string");
  std::string v = it->get<std::string>();
  if (v.empty()) fail_line(line, std::string("key '") + key + "' must be non-empty");
  return v;
}

int require_score(const ojson& v, std::size_t line, const char* what) {
  if (!v.is_number_integer()) fail_line(line, std::string(what) + " must be an integer");
  const auto s = v.get<std::int64_t>();
  if (s < 0 || s >= kNumClasses)
    fail_line(line, std::string(what) + " " + std::to_string(s) + " outside {0,1,2,3}");
  return static_cast<int>(s);
}

std::vector<int> parse_rater_scores(const ojson& v, std::size_t line) {
  if (!v.is_array()) fail_line(line, "rater_scores must be an array");
  if (v.size() != 3)
    fail_line(line, "rater_scores must hold exactly 3 scores, got " + std::to_string(v.size()));
  std::vector<int> out;
  for (const auto& s : v) out.push_back(require_score(s, line, "rater score"));
  return out;
}

template <typename Fn>
void for_each_line(const std::string& text, Fn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find('\n', pos);
    std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) {
      ojson obj;
      try {
        obj = ojson::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail_line(line_no, std::string("malformed JSON: ") + e.what());
      }
      if (!obj.is_object()) fail_line(line_no, "expected a JSON object");
      fn(obj, line_no);
    }
    if (end == std::string::npos) break;
    pos = end + 1;
  }
}

bool all_equal(const std::vector<int>& s) {
  return std::adjacent_find(s.begin(), s.end(), std::not_equal_to<>()) == s.end();
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: break;
  }
  return "unassigned";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "unassigned") return Split::kUnassigned;
  throw DataError("unknown split '" + s + "'");
}

std::vector<const ImageSample*> DatasetManifest::split(Split which) const {
  std::vector<const ImageSample*> out;
  for (const auto& s : samples)
    if (s.split == which) out.push_back(&s);
  return out;
}

std::size_t DatasetManifest::subject_count() const {
  std::set<std::string> ids;
  for (const auto& s : samples) ids.insert(s.subject_id);
  return ids.size();
}

void DatasetManifest::recount() {
  per_class_counts.fill(0);
  for (const auto& s : samples) ++per_class_counts[static_cast<std::size_t>(s.label)];
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root,
                               const LoadOptions& opts) {
  DatasetManifest m;
  m.root = root;
  std::unordered_set<std::string> seen;
  bool first = true;
  for_each_line(text, [&](const ojson& obj, std::size_t line) {
    if (first && !obj.contains("image_id") && obj.contains("provenance")) {
      first = false;
      if (!obj["provenance"].is_string()) fail_line(line, "provenance must be a string");
      m.provenance = obj["provenance"].get<std::string>();
      return;
    }
    first = false;
    ImageSample s;
    s.image_id = require_string(obj, "image_id", line);
    s.image_path = require_string(obj, "image_path", line);
    s.subject_id = require_string(obj, "subject_id", line);

    std::optional<int> label;
    if (auto it = obj.find("label"); it != obj.end()) label = require_score(*it, line, "label");
    if (auto it = obj.find("rater_scores"); it != obj.end()) {
      const auto scores = parse_rater_scores(*it, line);
      if (!all_equal(scores)) {
        if (!label) fail_line(line, "rater_scores disagree and no label given");
      } else if (label && *label != scores[0]) {
        fail_line(line, "label contradicts unanimous rater_scores");
      } else {
        label = scores[0];
      }
    }
    if (!label) fail_line(line, "record needs 'label' or 'rater_scores'");
    s.label = *label;

    if (auto it = obj.find("split"); it != obj.end()) {
      if (!it->is_string()) fail_line(line, "split must be a string");
      try {
        s.split = parse_split(it->get<std::string>());
      } catch (const DataError& e) {
        fail_line(line, e.what());
      }
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const auto& k = it.key();
      if (k != "image_id" && k != "image_path" && k != "subject_id" && k != "label" && k != "split")
        s.extra[k] = it.value();
    }
    if (!seen.insert(s.image_id).second) fail_line(line, "duplicate image_id '" + s.image_id + "'");
    if (opts.check_files && !std::filesystem::exists(root / s.image_path))
      fail_line(line, "image file not found: " + (root / s.image_path).string());
    m.samples.push_back(std::move(s));
  });
  m.recount();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts) {
  if (!std::filesystem::exists(path)) throw DataError("manifest not found: " + path.string());
  try {
    return parse_manifest(read_text(path), path.parent_path(), opts);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  std::string out;
  if (!manifest.provenance.empty()) {
    ojson head;
    head["provenance"] = manifest.provenance;
    out += head.dump() + '\n';
  }
  for (const auto& s : manifest.samples) {
    ojson obj;
    obj["image_id"] = s.image_id;
    obj["image_path"] = s.image_path;
    obj["subject_id"] = s.subject_id;
    obj["label"] = s.label;
    if (s.split != Split::kUnassigned) obj["split"] = to_string(s.split);
    for (auto it = s.extra.begin(); it != s.extra.end(); ++it) obj[it.key()] = it.value();
    out += obj.dump() + '\n';
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << manifest_to_jsonl(manifest);
}

std::vector<AnnotationRecord> parse_annotations(const std::string& text) {
  std::vector<AnnotationRecord> out;
  std::unordered_set<std::string> seen;
  for_each_line(text, [&](const ojson& obj, std::size_t line) {
    AnnotationRecord r;
    r.image_id = require_string(obj, "image_id", line);
    r.image_path = require_string(obj, "image_path", line);
    r.subject_id = require_string(obj, "subject_id", line);
    auto it = obj.find("rater_scores");
    if (it == obj.end()) fail_line(line, "missing key 'rater_scores'");
    r.rater_scores = parse_rater_scores(*it, line);
    for (auto kv = obj.begin(); kv != obj.end(); ++kv) {
      const auto& k = kv.key();
      if (k != "image_id" && k != "image_path" && k != "subject_id" && k != "rater_scores")
        r.extra[k] = kv.value();
    }
    if (!seen.insert(r.image_id).second) fail_line(line, "duplicate image_id '" + r.image_id + "'");
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  try {
    return parse_annotations(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

ConsensusResult consensus_filter(const std::vector<AnnotationRecord>& records) {
  ConsensusResult out;
  for (const auto& r : records) {
    if (r.rater_scores.size() != 3)
      throw DataError("record '" + r.image_id + "' has " + std::to_string(r.rater_scores.size()) +
                      " rater scores, expected 3");
    for (int s : r.rater_scores)
      if (s < 0 || s >= kNumClasses)
        throw DataError("record '" + r.image_id + "' has score outside {0,1,2,3}");
    if (!all_equal(r.rater_scores)) {
      out.dropped.push_back(r);
      continue;
    }
    ImageSample s;
    s.image_id = r.image_id;
    s.image_path = r.image_path;
    s.subject_id = r.subject_id;
    s.label = r.rater_scores[0];
    s.extra["rater_scores"] = r.rater_scores;
    for (auto it = r.extra.begin(); it != r.extra.end(); ++it) s.extra[it.key()] = it.value();
    out.retained.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> filter_by_score(const std::vector<double>& scores, double threshold) {
  if (!(threshold >= 0.0)) throw DataError("blur threshold must be >= 0");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= threshold) keep.push_back(i);
  return keep;
}

BlurFilterResult filter_blurred(const std::vector<ImageSample>& samples, double threshold,
                                const std::filesystem::path& root) {
  if (!(threshold >= 0.0)) throw DataError("blur threshold must be >= 0");
  BlurFilterResult out;
  out.scores.resize(samples.size());
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<std::string> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      out.scores[i] = blur_score(read_image(root / samples[i].image_path));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);

  const auto keep = filter_by_score(out.scores, threshold);
  std::size_t k = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (k < keep.size() && keep[k] == i) {
      out.retained.push_back(samples[i]);
      ++k;
    } else {
      out.dropped.push_back(samples[i]);
    }
    if (threshold > 0.0 && std::abs(out.scores[i] - threshold) <= 0.1 * threshold)
      out.borderline.push_back(samples[i].image_id);
  }
  return out;
}

DatasetManifest subject_disjoint_split(const DatasetManifest& manifest,
                                       const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (manifest.samples.empty()) throw DataError("cannot split an empty manifest");
  double sum = 0.0;
  int nonzero = 0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw DataError("split ratios must be non-negative");
    sum += r;
    nonzero += r > 0.0;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");

  std::vector<std::string> subjects;
  {
    std::set<std::string> ids;
    for (const auto& s : manifest.samples) ids.insert(s.subject_id);
    subjects.assign(ids.begin(), ids.end());
  }
  const auto n = subjects.size();
  if (n < static_cast<std::size_t>(nonzero))
    throw DataError("only " + std::to_string(n) + " subjects for " + std::to_string(nonzero) +
                    " non-empty splits");

  // Small epsilon so that e.g. 0.7 * 10 floors to 7.
  auto floor_count = [n](double r) {
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = floor_count(ratios[1]);
  const std::size_t n_test = floor_count(ratios[2]);
  const std::size_t n_train = n - n_val - n_test;

  Rng rng(mix_seed(seed, fnv1a("subject_disjoint_split")));
  shuffle(subjects.begin(), subjects.end(), rng);

  std::map<std::string, Split> assign;
  for (std::size_t i = 0; i < n; ++i)
    assign[subjects[i]] = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);

  DatasetManifest out = manifest;
  for (auto& s : out.samples) s.split = assign.at(s.subject_id);
  return out;
}

}  // namespace raffnet
