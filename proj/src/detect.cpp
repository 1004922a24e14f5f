#include "croesus/detect.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace croesus {

bool BoundingBox::valid() const {
  return x_min >= 0.0 && y_min >= 0.0 && x_max <= 1.0 && y_max <= 1.0 && x_min < x_max &&
         y_min < y_max;
}

double BoundingBox::area() const { return (x_max - x_min) * (y_max - y_min); }

void EdgeDetectorConfig::validate() const {
  auto rate = [](double r, const char* what) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument(std::string(what) + " must be in [0,1]");
  };
  rate(mislabel_rate, "mislabel_rate");
  rate(miss_rate, "miss_rate");
  rate(false_positive_rate, "false_positive_rate");
  if (correct_confidence.a <= 0 || correct_confidence.b <= 0 || error_confidence.a <= 0 ||
      error_confidence.b <= 0) {
    throw std::invalid_argument("beta parameters must be positive");
  }
  if (!(correct_confidence.mean() > error_confidence.mean())) {
    throw std::invalid_argument("correct-detection confidence mean must exceed the error mean");
  }
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the pair
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double sample_beta(std::mt19937_64& rng, const BetaParams& p) {
  std::gamma_distribution<double> ga(p.a, 1.0);
  std::gamma_distribution<double> gb(p.b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return p.mean();
  return std::clamp(x / (x + y), 0.0, 1.0);
}

const std::vector<std::string>* group_of(const EdgeDetectorConfig& cfg, const std::string& name) {
  for (const auto& g : cfg.confusion_groups) {
    if (std::find(g.begin(), g.end(), name) != g.end()) return &g;
  }
  return nullptr;
}

BoundingBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    BoundingBox b{x0, y0, x1, y1};
    if (b.valid()) return b;
  }
}

}  // namespace

std::vector<Label> edge_detect(const Frame& frame, const EdgeDetectorConfig& config) {
  std::mt19937_64 rng(mix(config.seed, frame.id));
  std::bernoulli_distribution miss(config.miss_rate);
  std::bernoulli_distribution mislabel(config.mislabel_rate);

  std::vector<Label> out;
  for (const auto& obj : frame.truth) {
    // Draw both coins for every object so that one rate does not shift the
    // random stream seen by the other.
    const bool dropped = miss(rng);
    const bool wrong = mislabel(rng);
    if (dropped) continue;
    Label l{obj.name, 0.0, obj.box};
    bool erroneous = false;
    if (wrong) {
      if (const auto* g = group_of(config, obj.name); g && g->size() > 1) {
        std::vector<std::string> others;
        for (const auto& n : *g) {
          if (n != obj.name) others.push_back(n);
        }
        std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
        l.name = others[pick(rng)];
        erroneous = true;
      }
    }
    l.confidence = sample_beta(rng, erroneous ? config.error_confidence : config.correct_confidence);
    out.push_back(std::move(l));
  }

  std::vector<std::string> vocab;
  for (const auto& g : config.confusion_groups) vocab.insert(vocab.end(), g.begin(), g.end());
  if (config.false_positive_rate > 0.0 && !vocab.empty()) {
    std::poisson_distribution<int> spurious(config.false_positive_rate);
    const int n = spurious(rng);
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    for (int i = 0; i < n; ++i) {
      Label l;
      l.name = vocab[pick(rng)];
      l.box = random_box(rng);
      l.confidence = sample_beta(rng, config.error_confidence);
      out.push_back(std::move(l));
    }
  }
  return out;
}

std::vector<Label> cloud_detect(const Frame& frame) {
  std::vector<Label> out = frame.truth;
  for (auto& l : out) l.confidence = 1.0;
  return out;
}

std::vector<Label> filter_low_confidence(const std::vector<Label>& labels, double floor) {
  std::vector<Label> out;
  std::copy_if(labels.begin(), labels.end(), std::back_inserter(out),
               [floor](const Label& l) { return l.confidence >= floor; });
  return out;
}

double overlap_ratio(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  if (a == b) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

const char* to_string(MatchKind kind) {
  switch (kind) {
    case MatchKind::NoOverlap: return "no_overlap";
    case MatchKind::SameName: return "same_name";
    case MatchKind::DifferentName: return "different_name";
  }
  return "?";
}

MatchOutcome match_labels(const std::vector<Label>& edge, const std::vector<Label>& cloud,
                          double overlap_threshold) {
  struct Candidate {
    double overlap;
    std::size_t e;
    std::size_t c;
  };
  std::vector<Candidate> cands;
  for (std::size_t e = 0; e < edge.size(); ++e) {
    for (std::size_t c = 0; c < cloud.size(); ++c) {
      const double ov = overlap_ratio(edge[e].box, cloud[c].box);
      if (ov > 0.0 && ov >= overlap_threshold) cands.push_back({ov, e, c});
    }
  }
  std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (cloud[a.c].name != cloud[b.c].name) return cloud[a.c].name < cloud[b.c].name;
    if (a.c != b.c) return a.c < b.c;
    return a.e < b.e;
  });

  MatchOutcome out;
  out.matches.resize(edge.size());
  std::vector<bool> edge_used(edge.size(), false), cloud_used(cloud.size(), false);
  for (std::size_t e = 0; e < edge.size(); ++e) out.matches[e].edge = edge[e];
  for (const auto& cand : cands) {
    if (edge_used[cand.e] || cloud_used[cand.c]) continue;
    edge_used[cand.e] = cloud_used[cand.c] = true;
    LabelMatch& m = out.matches[cand.e];
    m.cloud = cloud[cand.c];
    m.overlap = cand.overlap;
    m.kind = cloud[cand.c].name == edge[cand.e].name ? MatchKind::SameName : MatchKind::DifferentName;
  }
  for (std::size_t c = 0; c < cloud.size(); ++c) {
    if (!cloud_used[c]) out.unmatched_cloud.push_back(cloud[c]);
  }
  return out;
}

std::vector<LabelMatch> self_matches(const std::vector<Label>& labels) {
  std::vector<LabelMatch> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back({l, MatchKind::SameName, l, 1.0});
  return out;
}

double center_distance(const BoundingBox& box) {
  const double cx = 0.5 * (box.x_min + box.x_max) - 0.5;
  const double cy = 0.5 * (box.y_min + box.y_max) - 0.5;
  return std::sqrt(cx * cx + cy * cy);
}

std::optional<std::size_t> center_most(const std::vector<Label>& labels) {
  if (labels.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (center_distance(labels[i].box) < center_distance(labels[best].box)) best = i;
  }
  return best;
}

}  // namespace croesus
