#pragma once

#include <string>
#include <vector>

namespace mlfsc {

// Anomalous is the positive class; higher score means more anomalous.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> anomalous;

  void add(double score, bool is_anomalous) {
    scores.push_back(score);
    anomalous.push_back(is_anomalous);
  }
  std::size_t n_anomalous() const;
  std::size_t n_normal() const { return scores.size() - n_anomalous(); }
};

struct RocPoint {
  double threshold = 0.0;  // score > threshold => anomalous
  double fpr = 0.0;        // 1 - r1
  double tpr = 0.0;        // r2
};

struct ThresholdChoice {
  double threshold = 0.0;
  double r1 = 0.0;  // fraction of normal images classified normal
  double r2 = 0.0;  // fraction of anomalous images classified anomalous
  double balanced() const { return 0.5 * (r1 + r2); }
};

struct EvalReport {
  double auroc = 0.0;
  double threshold = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  double balanced = 0.0;
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  std::vector<RocPoint> roc_points;  // one per candidate threshold, ascending

  std::string to_json() const;
  std::string roc_csv() const;
};

// Mann-Whitney estimate P(anomalous > normal) + 1/2 P(tie), computed by
// sorting. The numerator is accumulated as an exact integer count of
// half-pairs, so the result is bit-identical to a pairwise count.
double auroc(const LabeledScores& data);

// Thresholds: -inf, midpoints between adjacent distinct scores, +inf.
// Maximizes (r1 + r2) / 2; ties go to higher r2, then lower threshold.
ThresholdChoice best_threshold(const LabeledScores& data);

// All candidate thresholds with their ROC coordinates.
std::vector<RocPoint> roc_points(const LabeledScores& data);

// Parses a scores CSV (header with image_path, label, combined; label is
// "normal" or "anomalous"). Errors carry the 1-based line number.
LabeledScores read_scores_csv(const std::string& path);

EvalReport evaluate(const LabeledScores& data);
EvalReport evaluate(const std::string& scores_csv_path);

}  // namespace mlfsc
