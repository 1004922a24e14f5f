#include "croesus/thresholds.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

namespace croesus {

void ThresholdPair::validate() const {
  if (!(theta_low >= 0.0 && theta_low <= theta_high && theta_high <= 1.0)) {
    throw std::invalid_argument("threshold pair needs 0 <= low <= high <= 1, got (" + std::to_string(theta_low) +
                                ", " + std::to_string(theta_high) + ")");
  }
}

const char* to_string(Decision d) {
  switch (d) {
    case Decision::Discard: return "discard";
    case Decision::Keep: return "keep";
    case Decision::Validate: return "validate";
  }
  return "?";
}

const char* to_string(SearchMethod m) { return m == SearchMethod::BruteForce ? "brute" : "gradient"; }

Decision classify(double confidence, const ThresholdPair& pair) {
  if (confidence < pair.theta_low) return Decision::Discard;
  if (confidence > pair.theta_high) return Decision::Keep;
  return Decision::Validate;
}

bool frame_sent_to_cloud(const std::vector<Label>& edge, const std::optional<ThresholdPair>& pair) {
  if (!pair) return true;
  return std::any_of(edge.begin(), edge.end(),
                     [&](const Label& l) { return classify(l.confidence, *pair) == Decision::Validate; });
}

std::size_t TraceStats::m(const ThresholdPair& pair) const {
  return static_cast<std::size_t>(std::count_if(frames.begin(), frames.end(), [&](const TraceFrame& f) {
    return frame_sent_to_cloud(f.edge, pair);
  }));
}

TraceStats make_trace_stats(const std::vector<Frame>& frames, const EdgeDetectorConfig& detector,
                            double confidence_floor) {
  TraceStats out;
  out.frames.reserve(frames.size());
  for (const auto& f : frames) {
    const auto raw = f.recorded_edge ? *f.recorded_edge : edge_detect(f, detector);
    out.frames.push_back({f.id, filter_low_confidence(raw, confidence_floor), cloud_detect(f)});
  }
  return out;
}

double bandwidth_ratio(const TraceStats& trace, const ThresholdPair& pair) {
  if (trace.frames.empty()) throw std::invalid_argument("bandwidth ratio of an empty trace");
  pair.validate();
  return static_cast<double>(trace.m(pair)) / static_cast<double>(trace.n());
}

double harmonic_f(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::size_t count_true_positives(const std::vector<Label>& output, const std::vector<Label>& truth,
                                 double overlap_threshold) {
  // Kuhn's augmenting paths; frames hold a handful of labels.
  std::vector<std::vector<std::size_t>> adj(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (output[i].name == truth[j].name && overlap_ratio(output[i].box, truth[j].box) > overlap_threshold) {
        adj[i].push_back(j);
      }
    }
  }
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(truth.size(), kFree);
  std::vector<bool> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t i) {
    for (std::size_t j : adj[i]) {
      if (seen[j]) continue;
      seen[j] = true;
      if (owner[j] == kFree || augment(owner[j])) {
        owner[j] = i;
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    seen.assign(truth.size(), false);
    if (augment(i)) ++matched;
  }
  return matched;
}

FScore end_to_end_fscore(const TraceStats& trace, const std::optional<ThresholdPair>& pair,
                         double overlap_threshold) {
  if (trace.frames.empty()) throw std::invalid_argument("F-score of an empty trace");
  if (pair) pair->validate();
  std::size_t tp = 0, shown = 0, expected = 0;
  for (const auto& f : trace.frames) {
    expected += f.truth.size();
    if (frame_sent_to_cloud(f.edge, pair)) {
      // the cloud labels replace the edge output outright
      shown += f.truth.size();
      tp += f.truth.size();
      continue;
    }
    std::vector<Label> kept;
    for (const auto& l : f.edge) {
      if (classify(l.confidence, *pair) == Decision::Keep) kept.push_back(l);
    }
    shown += kept.size();
    tp += count_true_positives(kept, f.truth, overlap_threshold);
  }
  FScore s;
  s.precision = shown == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(shown);
  s.recall = expected == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(expected);
  s.f = harmonic_f(s.precision, s.recall);
  return s;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

void check_search_args(double mu, double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 0.25)) throw std::invalid_argument("grid step must be in (0, 0.25]");
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be > 0");
}

// Strict "a is a better answer than b", feasibility already equal.
bool better_feasible(const GridPoint& a, const GridPoint& b) {
  if (a.delta != b.delta) return a.delta < b.delta;
  if (a.score.f != b.score.f) return a.score.f > b.score.f;
  if (a.pair.width() != b.pair.width()) return a.pair.width() < b.pair.width();
  if (a.pair.theta_low != b.pair.theta_low) return a.pair.theta_low < b.pair.theta_low;
  return a.pair.theta_high < b.pair.theta_high;
}

bool better_infeasible(const GridPoint& a, const GridPoint& b) {
  if (a.score.f != b.score.f) return a.score.f > b.score.f;
  return better_feasible(a, b);
}

GridPoint evaluate(const TraceStats& trace, const ThresholdPair& pair, double overlap) {
  return {pair, bandwidth_ratio(trace, pair), end_to_end_fscore(trace, pair, overlap)};
}

OptimizationResult to_result(const GridPoint& p, double mu, SearchMethod method, std::size_t evals) {
  OptimizationResult r;
  r.pair = p.pair;
  r.delta = p.delta;
  r.score = p.score;
  r.mu = mu;
  r.feasible = p.score.f >= mu;
  r.method = method;
  r.evaluations = evals;
  return r;
}

}  // namespace

std::vector<double> grid_values(double grid_step) {
  if (!(grid_step > 0.0)) throw std::invalid_argument("grid step must be > 0");
  std::vector<double> out;
  for (std::size_t k = 0;; ++k) {
    // rounded so that 0.05*k prints and compares as the decimal it names
    const double v = std::round(static_cast<double>(k) * grid_step * 1e9) / 1e9;
    if (v >= 1.0 - 1e-12) break;
    out.push_back(v);
  }
  return out;
}

std::vector<GridPoint> heatmap(const TraceStats& trace, double grid_step, double overlap_threshold) {
  const auto vals = grid_values(grid_step);
  std::vector<GridPoint> out;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    for (std::size_t j = i; j < vals.size(); ++j) out.push_back(evaluate(trace, {vals[i], vals[j]}, overlap_threshold));
  }
  return out;
}

OptimizationResult brute_force_optimize(const TraceStats& trace, double mu, double grid_step,
                                        double overlap_threshold) {
  check_search_args(mu, grid_step);
  const auto points = heatmap(trace, grid_step, overlap_threshold);
  const GridPoint* best_feasible = nullptr;
  const GridPoint* best_any = nullptr;
  for (const auto& p : points) {
    if (p.score.f >= mu && (!best_feasible || better_feasible(p, *best_feasible))) best_feasible = &p;
    if (!best_any || better_infeasible(p, *best_any)) best_any = &p;
  }
  const GridPoint& chosen = best_feasible ? *best_feasible : *best_any;
  auto r = to_result(chosen, mu, SearchMethod::BruteForce, points.size());
  r.visited = points;
  return r;
}

OptimizationResult gradient_optimize(const TraceStats& trace, double mu, double grid_step, std::uint64_t seed,
                                     double overlap_threshold) {
  check_search_args(mu, grid_step);
  const auto vals = grid_values(grid_step);
  const int k = static_cast<int>(vals.size());
  std::map<std::pair<int, int>, GridPoint> memo;
  std::vector<std::pair<int, int>> order;
  auto at = [&](int i, int j) -> const GridPoint& {
    auto it = memo.find({i, j});
    if (it == memo.end()) {
      it = memo.emplace(std::pair{i, j}, evaluate(trace, {vals[i], vals[j]}, overlap_threshold)).first;
      order.push_back({i, j});
    }
    return it->second;
  };
  auto done = [&](int i, int j) {
    auto r = to_result(at(i, j), mu, SearchMethod::GradientStep, memo.size());
    for (const auto& ij : order) r.visited.push_back(memo.at(ij));
    return r;
  };
  auto valid = [&](int i, int j) { return i >= 0 && j < k && i <= j; };
  auto feasible = [&](const GridPoint& p) { return p.score.f >= mu; };

  // Never spend as much as the exhaustive sweep.
  const std::size_t total = static_cast<std::size_t>(k) * static_cast<std::size_t>(k + 1) / 2;
  auto out_of_budget = [&] { return memo.size() + 4 >= total; };

  // One climb: widen until feasible, then descend. Returns the end point.
  auto climb = [&](int a, int b) {
    // Phase 1: f only grows when the validate interval widens, so while
    // infeasible, take the widening step with the larger f.
    while (!feasible(at(a, b))) {
      if (out_of_budget()) return std::pair{a, b};
      const bool can_low = a > 0, can_high = b < k - 1;
      if (!can_low && !can_high) return std::pair{a, b};
      if (can_low && can_high) {
        const GridPoint& lo = at(a - 1, b);
        const GridPoint& hi = at(a, b + 1);
        if (better_infeasible(hi, lo)) {
          ++b;
        } else {
          --a;
        }
      } else if (can_low) {
        --a;
      } else {
        ++b;
      }
    }
    // Phase 2: among feasible neighbours (narrowing either end, or sliding
    // the window), move to the best one while it beats the current pair.
    while (!out_of_budget()) {
      const GridPoint& cur = at(a, b);
      std::optional<std::pair<int, int>> next;
      const std::pair<int, int> moves[] = {{a + 1, b}, {a, b - 1}, {a + 1, b + 1}, {a - 1, b - 1}};
      for (auto [i, j] : moves) {
        if (!valid(i, j)) continue;
        const GridPoint& p = at(i, j);
        if (!feasible(p) || !better_feasible(p, next ? at(next->first, next->second) : cur)) continue;
        next = {i, j};
      }
      if (!next) break;
      std::tie(a, b) = *next;
    }
    return std::pair{a, b};
  };

  // Restart from fresh seeded points until half the grid has been evaluated;
  // the memo makes revisits free.
  const std::size_t budget = total / 2;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, k - 1);
  std::optional<std::pair<int, int>> best;
  for (int starts = 0; starts < 4 * k && memo.size() < budget; ++starts) {
    int a = pick(rng), b = pick(rng);
    if (a > b) std::swap(a, b);
    const auto end = climb(a, b);
    if (!best) {
      best = end;
      continue;
    }
    const GridPoint& p = at(end.first, end.second);
    const GridPoint& q = at(best->first, best->second);
    const bool better = feasible(p) == feasible(q) ? (feasible(p) ? better_feasible(p, q) : better_infeasible(p, q))
                                                   : feasible(p);
    if (better) best = end;
  }
  const auto [a, b] = *best;
  return done(a, b);
}

}  // namespace croesus
