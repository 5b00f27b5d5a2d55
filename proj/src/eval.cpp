#include "mlfsc/eval.hpp"

#include "mlfsc/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mlfsc {

namespace {

void check_two_classes(const LabeledScores& data) {
  if (data.scores.size() != data.anomalous.size())
    throw Error("scores and labels differ in length");
  for (double s : data.scores)
    if (!std::isfinite(s)) throw Error("scores must be finite");
  if (data.n_anomalous() == 0 || data.n_normal() == 0)
    throw Error("evaluation needs both normal and anomalous samples");
}

// Distinct sorted scores with per-value class counts.
struct ScoreLevel {
  double score;
  std::int64_t normal = 0;
  std::int64_t anomalous = 0;
};

std::vector<ScoreLevel> levels_of(const LabeledScores& data) {
  std::vector<std::size_t> order(data.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data.scores[a] < data.scores[b]; });
  std::vector<ScoreLevel> levels;
  for (std::size_t i : order) {
    if (levels.empty() || levels.back().score != data.scores[i])
      levels.push_back({data.scores[i]});
    (data.anomalous[i] ? levels.back().anomalous : levels.back().normal)++;
  }
  return levels;
}

// A threshold t with a <= t < b, so "score > t" splits the two levels even
// when they are one ulp apart.
double midpoint(double a, double b) {
  const double mid = a + 0.5 * (b - a);
  return mid < b ? mid : a;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace

std::size_t LabeledScores::n_anomalous() const {
  return static_cast<std::size_t>(std::count(anomalous.begin(), anomalous.end(), true));
}

double auroc(const LabeledScores& data) {
  check_two_classes(data);
  // Twice the Mann-Whitney U: each strictly-below normal counts 2, ties 1.
  std::int64_t twice_u = 0;
  std::int64_t normals_below = 0;
  for (const ScoreLevel& level : levels_of(data)) {
    twice_u += level.anomalous * (2 * normals_below + level.normal);
    normals_below += level.normal;
  }
  const double pairs = static_cast<double>(data.n_anomalous()) *
                       static_cast<double>(data.n_normal());
  return static_cast<double>(twice_u) / (2.0 * pairs);
}

std::vector<RocPoint> roc_points(const LabeledScores& data) {
  check_two_classes(data);
  const auto levels = levels_of(data);
  const double n_normal = static_cast<double>(data.n_normal());
  const double n_anomalous = static_cast<double>(data.n_anomalous());
  std::vector<RocPoint> points;
  // Below every score: everything is anomalous.
  std::int64_t normal_at_or_below = 0;
  std::int64_t anomalous_at_or_below = 0;
  points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  for (std::size_t i = 0; i < levels.size(); ++i) {
    normal_at_or_below += levels[i].normal;
    anomalous_at_or_below += levels[i].anomalous;
    const double threshold = i + 1 < levels.size()
                                 ? midpoint(levels[i].score, levels[i + 1].score)
                                 : std::numeric_limits<double>::infinity();
    points.push_back({threshold, 1.0 - normal_at_or_below / n_normal,
                      1.0 - anomalous_at_or_below / n_anomalous});
  }
  return points;
}

ThresholdChoice best_threshold(const LabeledScores& data) {
  check_two_classes(data);
  const auto levels = levels_of(data);
  const std::int64_t n_normal = static_cast<std::int64_t>(data.n_normal());
  const std::int64_t n_anomalous = static_cast<std::int64_t>(data.n_anomalous());

  // balanced * 2 * n_normal * n_anomalous = tn * n_anomalous + tp * n_normal,
  // compared in integers so ties are exact.
  std::int64_t best_key = -1;
  std::int64_t best_tp = -1;
  ThresholdChoice best;
  auto consider = [&](double threshold, std::int64_t tn, std::int64_t tp) {
    const std::int64_t key = tn * n_anomalous + tp * n_normal;
    if (key > best_key || (key == best_key && tp > best_tp)) {
      best_key = key;
      best_tp = tp;
      best = {threshold, static_cast<double>(tn) / n_normal,
              static_cast<double>(tp) / n_anomalous};
    }
  };
  std::int64_t tn = 0;
  std::int64_t tp = n_anomalous;
  consider(-std::numeric_limits<double>::infinity(), tn, tp);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    tn += levels[i].normal;
    tp -= levels[i].anomalous;
    const double threshold = i + 1 < levels.size()
                                 ? midpoint(levels[i].score, levels[i + 1].score)
                                 : std::numeric_limits<double>::infinity();
    consider(threshold, tn, tp);
  }
  return best;
}

EvalReport evaluate(const LabeledScores& data) {
  EvalReport report;
  report.auroc = auroc(data);
  const ThresholdChoice t = best_threshold(data);
  report.threshold = t.threshold;
  report.r1 = t.r1;
  report.r2 = t.r2;
  report.balanced = t.balanced();
  report.n_normal = data.n_normal();
  report.n_anomalous = data.n_anomalous();
  report.roc_points = roc_points(data);
  return report;
}

LabeledScores read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scores file " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty scores file");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(path + ":1: missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column("label");
  const std::size_t score_col = column("combined");
  column("image_path");

  LabeledScores data;
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (fields.size() != header.size())
      throw Error(where + "expected " + std::to_string(header.size()) + " fields, got " +
                  std::to_string(fields.size()));
    const std::string& label = fields[label_col];
    if (label != "normal" && label != "anomalous")
      throw Error(where + "label must be 'normal' or 'anomalous', got '" + label + "'");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(fields[score_col], &used);
      if (used != fields[score_col].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(where + "bad score '" + fields[score_col] + "'");
    }
    if (!std::isfinite(score)) throw Error(where + "score is not finite");
    data.add(score, label == "anomalous");
  }
  if (data.scores.empty()) throw Error(path + ": no score rows");
  return data;
}

EvalReport evaluate(const std::string& scores_csv_path) {
  return evaluate(read_scores_csv(scores_csv_path));
}

std::string EvalReport::to_json() const {
  // JSON has no infinities; sentinel thresholds are written as null.
  auto finite_or_null = [](double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  nlohmann::json j = {{"auroc", auroc},
                      {"threshold", finite_or_null(threshold)},
                      {"r1", r1},
                      {"r2", r2},
                      {"balanced", balanced},
                      {"n_normal", n_normal},
                      {"n_anomalous", n_anomalous}};
  return j.dump(2) + "\n";
}

std::string EvalReport::roc_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : roc_points) out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  return out.str();
}

}  // namespace mlfsc
