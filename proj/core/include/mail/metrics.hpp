#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "mail/image.hpp"

namespace mail {

inline constexpr std::array<double, 5> kPrecisionThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

/// |a and b| / |a or b|. Both empty gives 1, exactly one empty gives 0.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Fraction of ious strictly greater than threshold.
double precision_at(std::span<const double> ious, double threshold);

struct CandidateMatch {
  int index;
  double iou;
};

/// Highest-IoU candidate, lowest index on ties. Absent only when the best
/// IoU is zero and the referent's candidate was dropped by the generator.
std::optional<CandidateMatch> best_candidate(std::span<const BinaryMask> candidates, const BinaryMask& gt,
                                             bool referent_dropped = false);

struct EvalSummary {
  double mean_iou = 0.0;
  std::array<double, 5> precision_at{};  // indexed like kPrecisionThresholds
  int n_samples = 0;
};

EvalSummary summarize(std::span<const double> ious);

/// Keys: mean_iou, pr50, pr60, pr70, pr80, pr90, n_samples.
nlohmann::json to_json(const EvalSummary& summary);
std::string format_table(const EvalSummary& summary);

}  // namespace mail
