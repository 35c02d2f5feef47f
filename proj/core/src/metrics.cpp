#include "mail/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace mail {

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("iou: shape mismatch");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double precision_at(std::span<const double> ious, double threshold) {
  if (ious.empty()) throw std::invalid_argument("precision_at: empty iou list");
  std::size_t hits = 0;
  for (double v : ious) hits += v > threshold;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

std::optional<CandidateMatch> best_candidate(std::span<const BinaryMask> candidates, const BinaryMask& gt,
                                             bool referent_dropped) {
  if (candidates.empty()) throw std::invalid_argument("best_candidate: no candidates");
  CandidateMatch best{0, iou(candidates[0], gt)};
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    const double v = iou(candidates[k], gt);
    if (v > best.iou) best = {static_cast<int>(k), v};
  }
  if (referent_dropped && best.iou == 0.0) return std::nullopt;
  return best;
}

EvalSummary summarize(std::span<const double> ious) {
  EvalSummary s;
  s.n_samples = static_cast<int>(ious.size());
  if (ious.empty()) return s;
  double total = 0;
  for (double v : ious) total += v;
  s.mean_iou = total / static_cast<double>(ious.size());
  for (std::size_t i = 0; i < kPrecisionThresholds.size(); ++i)
    s.precision_at[i] = precision_at(ious, kPrecisionThresholds[i]);
  return s;
}

nlohmann::json to_json(const EvalSummary& s) {
  nlohmann::json j;
  j["mean_iou"] = s.mean_iou;
  j["pr50"] = s.precision_at[0];
  j["pr60"] = s.precision_at[1];
  j["pr70"] = s.precision_at[2];
  j["pr80"] = s.precision_at[3];
  j["pr90"] = s.precision_at[4];
  j["n_samples"] = s.n_samples;
  return j;
}

std::string format_table(const EvalSummary& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "  samples  mIoU    Pr@0.5  Pr@0.6  Pr@0.7  Pr@0.8  Pr@0.9\n"
                "  %7d  %6.2f  %6.2f  %6.2f  %6.2f  %6.2f  %6.2f\n",
                s.n_samples, 100 * s.mean_iou, 100 * s.precision_at[0], 100 * s.precision_at[1],
                100 * s.precision_at[2], 100 * s.precision_at[3], 100 * s.precision_at[4]);
  return buf;
}

}  // namespace mail
