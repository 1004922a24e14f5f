#pragma once

// Random scheduler for Engine instances. Picks, at every turn, one of: step a
// runnable instance, hand cloud labels to an instance that has none yet, or
// fire the lock timeout of a blocked instance. Delays do not block; they only
// move the logical clock.

#include <deque>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include "croesus/cc.hpp"

namespace croesus::harness {

struct InterleaveOptions {
  double timeout_weight = 0.05;  // chance, per turn, to fire a timeout while others can run
  bool retry_aborted = false;    // the client resubmits aborted instances
  std::size_t max_retries = 1000;
  std::size_t max_turns = 10'000'000;
  /// At most this many instances in flight; the rest arrive as others end. 0: all at once.
  std::size_t window = 0;
  /// Final input per instance; default draws nothing from the cloud and
  /// confirms every edge label.
  std::function<std::vector<LabelMatch>(const TransactionInstance&)> matches;
};

struct InterleaveStats {
  std::size_t turns = 0;
  std::size_t timeouts = 0;
  std::size_t aborts = 0;
  std::size_t retries = 0;
};

inline InterleaveStats interleave(Engine& engine, std::vector<InstanceId> ids, std::uint64_t seed,
                                  InterleaveOptions opt = {}) {
  std::mt19937_64 rng(seed);
  InterleaveStats stats;
  std::deque<InstanceId> pending(ids.begin(), ids.end());
  std::set<InstanceId> runnable, blocked, awaiting, undelivered;
  std::size_t live = 0;
  auto admit = [&] {
    while (!pending.empty() && (opt.window == 0 || live < opt.window)) {
      runnable.insert(pending.front());
      undelivered.insert(pending.front());
      pending.pop_front();
      ++live;
    }
  };
  admit();

  auto pick = [&](const std::set<InstanceId>& s) {
    std::uniform_int_distribution<std::size_t> d(0, s.size() - 1);
    return *std::next(s.begin(), static_cast<long>(d(rng)));
  };
  auto matches_for = [&](InstanceId id) {
    const auto& inst = engine.instance(id);
    return opt.matches ? opt.matches(inst) : self_matches(inst.edge_labels);
  };
  auto finish = [&](InstanceId id) {
    --live;
    undelivered.erase(id);
    if (engine.instance(id).state == InstanceState::Aborted) {
      ++stats.aborts;
      if (opt.retry_aborted && stats.retries < opt.max_retries) {
        ++stats.retries;
        const auto& old = engine.instance(id);
        const auto fresh = engine.create_instance(old.template_id, old.frame, old.edge_labels, old.aux, old.params);
        runnable.insert(fresh);
        undelivered.insert(fresh);
        ++live;
      }
    }
  };
  auto handle = [&](InstanceId id, const StepOutcome& out) {
    switch (out.kind) {
      case StepOutcome::Kind::Continue: runnable.insert(id); break;
      case StepOutcome::Kind::Delay:
        engine.advance_clock(out.delay_ms);
        runnable.insert(id);
        break;
      case StepOutcome::Kind::WaitLock: blocked.insert(id); break;
      case StepOutcome::Kind::WaitCloud: awaiting.insert(id); break;
      case StepOutcome::Kind::Finished:
      case StepOutcome::Kind::Aborted:
        finish(id);
        admit();
        break;
    }
  };

  while (live > 0) {
    admit();
    if (++stats.turns > opt.max_turns) throw std::runtime_error("interleaver exceeded its turn budget");
    for (InstanceId w : engine.take_woken()) {
      if (blocked.erase(w)) runnable.insert(w);
    }
    std::bernoulli_distribution fire(opt.timeout_weight);
    const bool can_deliver = !undelivered.empty();
    if (!blocked.empty() && ((runnable.empty() && !can_deliver) || fire(rng))) {
      const InstanceId id = pick(blocked);
      blocked.erase(id);
      ++stats.timeouts;
      engine.advance_clock(engine.config().lock_timeout_ms);
      if (auto out = engine.on_timeout(id, engine.wait_epoch(id))) {
        handle(id, *out);
      } else {
        runnable.insert(id);  // grant raced the timeout
      }
      continue;
    }
    std::uniform_int_distribution<std::size_t> which(0, runnable.size() + (can_deliver ? 1 : 0) - 1);
    if (runnable.empty() || (can_deliver && which(rng) == runnable.size())) {
      if (!can_deliver) throw std::runtime_error("interleaver stuck");
      const InstanceId id = pick(undelivered);
      undelivered.erase(id);
      if (engine.instance(id).state == InstanceState::Aborted) continue;
      engine.deliver(id, matches_for(id));
      if (awaiting.erase(id)) runnable.insert(id);
      continue;
    }
    const InstanceId id = pick(runnable);
    runnable.erase(id);
    engine.advance_clock(0.01);
    handle(id, engine.step(id));
  }
  return stats;
}

}  // namespace croesus::harness
