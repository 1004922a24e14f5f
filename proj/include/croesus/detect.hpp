#pragma once

// Detector abstraction: labels and frames, a synthetic noisy edge detector,
// the ground-truth cloud detector, confidence filtering and the edge/cloud
// label matcher that decides how each final section is invoked.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace croesus {

using FrameId = std::uint64_t;

struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 1.0;
  double y_max = 1.0;

  bool valid() const;
  double area() const;
  bool operator==(const BoundingBox&) const = default;
};

struct Label {
  std::string name;
  double confidence = 1.0;
  BoundingBox box;

  bool operator==(const Label&) const = default;
};

/// Input from an auxiliary device (a click, a transfer command...).
struct AuxInput {
  std::string kind;
  std::map<std::string, std::string> params;

  bool operator==(const AuxInput&) const = default;
};

struct Frame {
  FrameId id = 0;
  double ts_ms = 0.0;
  std::vector<Label> truth;
  std::optional<AuxInput> aux;
  /// Edge detections recorded alongside the trace, when present.
  std::optional<std::vector<Label>> recorded_edge;
};

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
  double mean() const { return a / (a + b); }
};

struct EdgeDetectorConfig {
  double mislabel_rate = 0.0;
  double miss_rate = 0.0;
  /// Expected number of spurious labels per frame (Poisson mean).
  double false_positive_rate = 0.0;
  BetaParams correct_confidence{8.0, 2.0};
  BetaParams error_confidence{2.0, 3.0};
  std::uint64_t seed = 1;
  /// Groups of names the detector confuses with each other. A mislabel picks
  /// another member of the true name's group; spurious labels draw from the
  /// union of all groups.
  std::vector<std::vector<std::string>> confusion_groups;

  /// Throws std::invalid_argument on out-of-range rates or inverted means.
  void validate() const;
};

/// L_e for one frame. Deterministic in (frame.id, config.seed).
std::vector<Label> edge_detect(const Frame& frame, const EdgeDetectorConfig& config);

/// L_c for one frame: the ground truth at confidence 1.
std::vector<Label> cloud_detect(const Frame& frame);

std::vector<Label> filter_low_confidence(const std::vector<Label>& labels, double floor);

/// Intersection over union.
double overlap_ratio(const BoundingBox& a, const BoundingBox& b);

enum class MatchKind { NoOverlap, SameName, DifferentName };

const char* to_string(MatchKind kind);

struct LabelMatch {
  Label edge;
  MatchKind kind = MatchKind::NoOverlap;
  /// The cloud label handed to the final section; empty for NoOverlap.
  std::optional<Label> cloud;
  double overlap = 0.0;
};

struct MatchOutcome {
  std::vector<LabelMatch> matches;  // one per edge label, input order
  std::vector<Label> unmatched_cloud;
};

inline constexpr double kDefaultOverlapThreshold = 0.10;

/// Pairs each edge label with the qualifying cloud label of largest overlap
/// (overlap >= threshold). Each cloud label is used at most once; larger
/// overlaps claim first, ties go to the lexicographically smaller cloud name
/// and then to the earlier cloud label.
MatchOutcome match_labels(const std::vector<Label>& edge, const std::vector<Label>& cloud,
                          double overlap_threshold = kDefaultOverlapThreshold);

/// Every label matched to itself; used when a frame is not sent to the cloud.
std::vector<LabelMatch> self_matches(const std::vector<Label>& labels);

/// Euclidean distance from the box center to the frame center (0.5, 0.5).
double center_distance(const BoundingBox& box);

/// Index of the label closest to the frame center, or nullopt when empty.
std::optional<std::size_t> center_most(const std::vector<Label>& labels);

}  // namespace croesus
