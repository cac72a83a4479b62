#include "raffnet/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace raffnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt2(double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", round2(v));
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_cell(const std::string& s) {
  if (s.empty() || s == "-") return kNaN;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw DataError("malformed numeric CSV cell '" + s + "'");
  }
}

}  // namespace

double round2(double v) {
  if (!std::isfinite(v)) return v;
  // Epsilon absorbs representation error so that x.xx5 rounds up.
  return std::floor(v * 100.0 + 0.5 + 1e-7) / 100.0;
}

std::int64_t EvalReport::row_sum(int c) const {
  std::int64_t s = 0;
  for (auto v : confusion[static_cast<std::size_t>(c)]) s += v;
  return s;
}

double macro_avg(const std::array<double, kNumClasses>& per_class) {
  double sum = 0.0;
  int count = 0;
  for (double v : per_class) {
    if (std::isnan(v)) continue;
    sum += v;
    ++count;
  }
  return count == 0 ? 0.0 : round2(sum / count);
}

EvalReport tally(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size()) throw DimensionError("tally: labels and predictions differ in length");
  EvalReport r;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= kNumClasses || p < 0 || p >= kNumClasses) throw DataError("tally: class index out of range");
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    correct += y == p;
  }
  r.n = static_cast<std::int64_t>(labels.size());
  for (int c = 0; c < kNumClasses; ++c) {
    const auto row = r.row_sum(c);
    r.per_class_acc[static_cast<std::size_t>(c)] =
        row > 0 ? 100.0 * static_cast<double>(r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                      static_cast<double>(row)
                : kNaN;
  }
  r.macro_avg = macro_avg(r.per_class_acc);
  r.micro_avg = r.n > 0 ? round2(100.0 * static_cast<double>(correct) / static_cast<double>(r.n)) : 0.0;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (double v : r.per_class_acc) per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"n", r.n},
          {"confusion", r.confusion},
          {"per_class_acc", per_class},
          {"macro_avg", r.macro_avg},
          {"micro_avg", r.micro_avg}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.n = j.at("n").get<std::int64_t>();
    r.confusion = j.at("confusion").get<decltype(r.confusion)>();
    const auto& pc = j.at("per_class_acc");
    if (pc.size() != kNumClasses) throw DataError("per_class_acc must hold 4 values");
    for (std::size_t c = 0; c < kNumClasses; ++c) r.per_class_acc[c] = pc[c].is_null() ? kNaN : pc[c].get<double>();
    r.macro_avg = j.at("macro_avg").get<double>();
    r.micro_avg = j.value("micro_avg", r.macro_avg);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed EvalReport: ") + e.what());
  }
  std::int64_t total = 0;
  for (const auto& row : r.confusion)
    for (auto v : row) total += v;
  if (total != r.n) throw DataError("EvalReport: confusion entries do not sum to n");
  return r;
}

Evaluation evaluate(const RaffNet& model, const DatasetManifest& manifest, Split split, const ImageStore& images,
                    FeatureCache* cache) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    if (manifest.samples[i].split == split) idx.push_back(i);
  if (idx.empty()) throw DataError("cannot evaluate: split '" + to_string(split) + "' is empty");

  Evaluation out;
  out.predictions.resize(idx.size());
  std::vector<std::string> errors(idx.size());
  const auto n = static_cast<std::int64_t>(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t k = 0; k < n; ++k) {
    try {
      const auto i = idx[static_cast<std::size_t>(k)];
      const auto& s = manifest.samples[i];
      Inference inf;
      if (cache && model.config().uses_fecal()) {
        const Matrix feats = cache->get(model, images, i);
        inf = model.forward(images.get(i), &feats);
      } else {
        inf = model.forward(images.get(i));
      }
      out.predictions[static_cast<std::size_t>(k)] = {s.image_id, s.label, inf.predicted, inf.state.logits};
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(k)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);

  std::vector<int> labels, preds;
  for (const auto& p : out.predictions) {
    labels.push_back(p.label);
    preds.push_back(p.predicted);
  }
  out.report = tally(labels, preds);
  return out;
}

std::pair<double, double> intra_inter_distance(const Matrix& features, const std::vector<int>& labels,
                                               DistanceMode mode) {
  const Index n = features.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw DimensionError("features and labels differ in length");
  if (n < 2) throw DataError("intra_inter_distance needs at least 2 samples");
  std::map<int, std::vector<Index>> groups;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= kNumClasses) throw DataError("label outside {0,1,2,3}");
    groups[y].push_back(i);
  }

  double intra_sum = 0.0;
  int intra_classes = 0;
  for (const auto& [label, members] : groups) {
    if (members.size() < 2) continue;
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b, ++pairs)
        s += (features.row(members[a]) - features.row(members[b])).norm();
    intra_sum += s / static_cast<double>(pairs);
    ++intra_classes;
  }
  if (intra_classes == 0) throw DataError("intra_inter_distance: every class has a single member");

  std::vector<const std::vector<Index>*> present;
  for (const auto& [label, members] : groups) present.push_back(&members);
  double inter_sum = 0.0;
  std::size_t class_pairs = 0;
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b, ++class_pairs) {
      const auto& ga = *present[a];
      const auto& gb = *present[b];
      if (mode == DistanceMode::kCentroid) {
        Eigen::RowVectorXd ca = Eigen::RowVectorXd::Zero(features.cols()), cb = ca;
        for (Index i : ga) ca += features.row(i);
        for (Index i : gb) cb += features.row(i);
        inter_sum += (ca / static_cast<double>(ga.size()) - cb / static_cast<double>(gb.size())).norm();
      } else {
        double s = 0.0;
        for (Index i : ga)
          for (Index j : gb) s += (features.row(i) - features.row(j)).norm();
        inter_sum += s / static_cast<double>(ga.size() * gb.size());
      }
    }
  }
  const double inter = class_pairs == 0 ? 0.0 : inter_sum / static_cast<double>(class_pairs);
  return {intra_sum / intra_classes, inter};
}

Matrix embed_2d(const Matrix& features) {
  if (features.rows() < 3) throw DataError("embed_2d needs at least 3 samples");
  if (features.cols() < 1) throw DataError("embed_2d needs at least one feature dimension");
  const Matrix centered = features.rowwise() - features.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw DataError("embed_2d: eigen-decomposition failed");
  const Index d = cov.rows();
  const double top = solver.eigenvalues()(d - 1);
  if (!(top > 1e-12 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff()))) throw DataError("embed_2d: rank-0 input");

  Matrix basis = Matrix::Zero(d, 2);
  for (Index k = 0; k < std::min<Index>(2, d); ++k) {
    Vector v = solver.eigenvectors().col(d - 1 - k);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(k) = v;
  }
  return centered * basis;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "markdown" || s == "md") return ReportFormat::kMarkdown;
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw DataError("unknown report format '" + s + "'");
}

std::string render_report(const std::vector<NamedReport>& reports, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kMarkdown: {
      double best = -1.0;
      for (const auto& [name, r] : reports) best = std::max(best, round2(r.macro_avg));
      out << "| Model | BBPS0 | BBPS1 | BBPS2 | BBPS3 | AVG | Micro |\n";
      out << "|---|---|---|---|---|---|---|\n";
      for (const auto& [name, r] : reports) {
        const bool is_best = round2(r.macro_avg) == best;
        out << "| " << (is_best ? "**" + name + "**" : name);
        for (double v : r.per_class_acc) out << " | " << fmt2(v);
        out << " | " << (is_best ? "**" + fmt2(r.macro_avg) + "**" : fmt2(r.macro_avg)) << " | " << fmt2(r.micro_avg)
            << " |\n";
      }
      break;
    }
    case ReportFormat::kCsv: {
      out << "model,bbps0,bbps1,bbps2,bbps3,avg,micro\n";
      for (const auto& [name, r] : reports) {
        out << csv_field(name);
        for (double v : r.per_class_acc) out << ',' << (std::isnan(v) ? std::string() : fmt2(v));
        out << ',' << fmt2(r.macro_avg) << ',' << fmt2(r.micro_avg) << '\n';
      }
      break;
    }
    case ReportFormat::kJson: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& [name, r] : reports) arr.push_back({{"name", name}, {"report", to_json(r)}});
      out << arr.dump(2) << '\n';
      break;
    }
  }
  return out.str();
}

std::vector<ReportRow> parse_report_csv(const std::string& csv) {
  std::vector<ReportRow> rows;
  std::istringstream in(csv);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto cells = split_csv_line(line);
    if (cells.size() != 7) throw DataError("report CSV row must have 7 fields: " + line);
    ReportRow r;
    r.name = cells[0];
    for (std::size_t c = 0; c < kNumClasses; ++c) r.per_class[c] = parse_cell(cells[c + 1]);
    r.avg = parse_cell(cells[5]);
    r.micro = parse_cell(cells[6]);
    rows.push_back(r);
  }
  return rows;
}

std::string stats_csv(const DatasetStats& s) {
  std::ostringstream out;
  char buf[128];
  out << "intra,inter,count0,count1,count2,count3,n_subjects\n";
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f", s.intra_dist, s.inter_dist);
  out << buf;
  for (int c : s.per_class_counts) out << ',' << c;
  out << ',' << s.n_subjects << '\n';
  return out.str();
}

}  // namespace raffnet
