#pragma once

// Bandwidth thresholding. Detections with confidence below theta_low are
// discarded, above theta_high kept, and everything in between is validated
// by sending the frame to the cloud.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "croesus/detect.hpp"

namespace croesus {

struct ThresholdPair {
  double theta_low = 0.0;
  double theta_high = 1.0;

  /// 0 <= low <= high <= 1. Equal endpoints give a point validate interval.
  void validate() const;
  double width() const { return theta_high - theta_low; }
  bool operator==(const ThresholdPair&) const = default;
};

enum class Decision : std::uint8_t { Discard, Keep, Validate };
const char* to_string(Decision d);

Decision classify(double confidence, const ThresholdPair& pair);

struct TraceFrame {
  FrameId id = 0;
  std::vector<Label> edge;   // after the confidence floor
  std::vector<Label> truth;  // what the cloud model returns
};

struct TraceStats {
  std::vector<TraceFrame> frames;

  std::size_t n() const { return frames.size(); }
  /// Frames holding at least one detection inside [low, high].
  std::size_t m(const ThresholdPair& pair) const;
};

/// Edge detections come from the recorded ones when present, otherwise from
/// the synthetic detector; the floor filter is applied either way.
TraceStats make_trace_stats(const std::vector<Frame>& frames, const EdgeDetectorConfig& detector,
                            double confidence_floor);

/// Whether the frame goes to the cloud. No pair means every frame does.
bool frame_sent_to_cloud(const std::vector<Label>& edge, const std::optional<ThresholdPair>& pair);

/// delta = m / n. Throws std::invalid_argument on an empty trace.
double bandwidth_ratio(const TraceStats& trace, const ThresholdPair& pair);

struct FScore {
  double precision = 1.0;
  double recall = 1.0;
  double f = 1.0;
};

/// 2pr/(p+r), and 0 when p + r == 0.
double harmonic_f(double precision, double recall);

inline constexpr double kFScoreOverlap = 0.5;

/// Client-visible accuracy. Validated frames show the ground truth, other
/// frames show their kept detections. A true positive is a one-to-one match
/// with the same name and IoU > overlap_threshold. An empty output has
/// precision 1; an empty ground truth has recall 1.
FScore end_to_end_fscore(const TraceStats& trace, const std::optional<ThresholdPair>& pair,
                         double overlap_threshold = kFScoreOverlap);

/// Maximum number of same-name pairs with IoU > threshold, each label used once.
std::size_t count_true_positives(const std::vector<Label>& output, const std::vector<Label>& truth,
                                 double overlap_threshold);

struct GridPoint {
  ThresholdPair pair;
  double delta = 0.0;
  FScore score;
};

enum class SearchMethod : std::uint8_t { BruteForce, GradientStep };
const char* to_string(SearchMethod m);

struct OptimizationResult {
  ThresholdPair pair;
  double delta = 0.0;
  FScore score;
  double mu = 0.0;
  bool feasible = false;
  SearchMethod method = SearchMethod::BruteForce;
  std::size_t evaluations = 0;
  std::vector<GridPoint> visited;  // every evaluated pair, in evaluation order
};

/// Grid values k*step for k >= 0 while below 1; pairs with low <= high.
std::vector<double> grid_values(double grid_step);
std::vector<GridPoint> heatmap(const TraceStats& trace, double grid_step,
                               double overlap_threshold = kFScoreOverlap);

/// Among pairs with f >= mu, the one of least delta; ties go to higher f,
/// then the narrower interval, then the smaller (low, high). With no
/// feasible pair, the pair of highest f is reported with feasible = false.
OptimizationResult brute_force_optimize(const TraceStats& trace, double mu, double grid_step,
                                        double overlap_threshold = kFScoreOverlap);

/// Coordinate descent over the same grid from seeded starts, restarted
/// until half the grid has been evaluated. Can stop at a local optimum.
OptimizationResult gradient_optimize(const TraceStats& trace, double mu, double grid_step, std::uint64_t seed,
                                     double overlap_threshold = kFScoreOverlap);

}  // namespace croesus
