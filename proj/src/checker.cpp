#include "croesus/checker.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

namespace croesus {

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::CycleInSections: return "CycleInSections";
    case ViolationKind::MSSRa: return "MSSRa";
    case ViolationKind::MSSRb: return "MSSRb";
    case ViolationKind::MSIAOrder: return "MSIAOrder";
  }
  return "?";
}

std::size_t PrecedenceGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& s : succ) n += s.size();
  return n;
}

namespace {

struct Lifecycle {
  const SectionEvent* begin_initial = nullptr;
  const SectionEvent* commit_initial = nullptr;
  const SectionEvent* begin_final = nullptr;
  const SectionEvent* commit_final = nullptr;
  bool aborted = false;
};

std::map<InstanceId, Lifecycle> lifecycles(std::span<const SectionEvent> history) {
  std::map<InstanceId, Lifecycle> out;
  for (const auto& ev : history) {
    Lifecycle& l = out[ev.instance];
    const bool initial = ev.section == SectionKind::Initial;
    switch (ev.kind) {
      case EventKind::Begin: (initial ? l.begin_initial : l.begin_final) = &ev; break;
      case EventKind::Commit: (initial ? l.commit_initial : l.commit_final) = &ev; break;
      case EventKind::Abort: l.aborted = true; break;
    }
  }
  return out;
}

// Both sections committed for every non-aborted instance, else throws.
std::map<InstanceId, Lifecycle> committed(std::span<const SectionEvent> history) {
  auto all = lifecycles(history);
  std::map<InstanceId, Lifecycle> out;
  for (auto& [id, l] : all) {
    if (l.aborted) continue;
    if (!l.commit_initial || !l.commit_final) {
      throw IncompleteHistory("instance " + std::to_string(id) + " has not reached final commit");
    }
    out.emplace(id, l);
  }
  return out;
}

std::vector<std::vector<std::size_t>> strongly_connected(const std::vector<std::vector<std::size_t>>& succ) {
  // Iterative Tarjan.
  const std::size_t n = succ.size();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, kUnset), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  std::size_t counter = 0;

  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnset) continue;
    std::vector<std::pair<std::size_t, std::size_t>> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      auto& [v, i] = call.back();
      if (i < succ[v].size()) {
        const std::size_t w = succ[v][i++];
        if (index[w] == kUnset) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      const std::size_t done = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
      if (low[done] == index[done]) {
        std::vector<std::size_t> comp;
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp.push_back(w);
        } while (w != done);
        out.push_back(std::move(comp));
      }
    }
  }
  return out;
}

}  // namespace

bool sections_conflict(const SectionEvent& a, const SectionEvent& b) {
  std::set<Key> aw, ar, bw, br;
  for (const auto& x : a.writes) aw.insert(x.key);
  for (const auto& x : a.reads) ar.insert(x.key);
  for (const auto& x : b.writes) bw.insert(x.key);
  for (const auto& x : b.reads) br.insert(x.key);
  for (const auto& k : aw) {
    if (bw.contains(k) || br.contains(k)) return true;
  }
  for (const auto& k : bw) {
    if (ar.contains(k)) return true;
  }
  return false;
}

PrecedenceGraph build_precedence_graph(std::span<const SectionEvent> history) {
  const auto lives = committed(history);
  PrecedenceGraph g;
  std::vector<const SectionEvent*> commits;
  for (const auto& [id, l] : lives) {
    commits.push_back(l.commit_initial);
    commits.push_back(l.commit_final);
  }
  std::sort(commits.begin(), commits.end(),
            [](const SectionEvent* a, const SectionEvent* b) { return a->seq < b->seq; });
  std::map<SectionRef, std::size_t> node_of;
  for (const auto* ev : commits) {
    node_of[{ev->instance, ev->section}] = g.nodes.size();
    g.nodes.push_back({ev->instance, ev->section});
    g.commit_seq.push_back(ev->seq);
  }
  std::vector<std::set<std::size_t>> succ(g.nodes.size());
  auto edge = [&](std::size_t a, std::size_t b) {
    if (a != b) succ[a].insert(b);
  };

  struct KeyAccesses {
    std::map<std::uint64_t, std::size_t> writer;  // version -> node
    std::vector<std::pair<std::uint64_t, std::size_t>> readers;
  };
  std::map<Key, KeyAccesses> keys;
  for (std::size_t n = 0; n < commits.size(); ++n) {
    for (const auto& w : commits[n]->writes) {
      if (w.version != 0) keys[w.key].writer[w.version] = n;  // 0: not installed by this section
    }
    for (const auto& r : commits[n]->reads) keys[r.key].readers.push_back({r.version, n});
  }
  for (const auto& [key, acc] : keys) {
    for (auto it = acc.writer.begin(); it != acc.writer.end(); ++it) {
      auto next = std::next(it);
      if (next != acc.writer.end()) edge(it->second, next->second);
    }
    for (const auto& [v, reader] : acc.readers) {
      if (auto w = acc.writer.find(v); w != acc.writer.end()) edge(w->second, reader);
      if (auto nx = acc.writer.upper_bound(v); nx != acc.writer.end()) edge(reader, nx->second);
    }
  }
  for (const auto& [id, l] : lives) edge(node_of.at({id, SectionKind::Initial}), node_of.at({id, SectionKind::Final}));

  g.succ.reserve(succ.size());
  for (auto& s : succ) g.succ.emplace_back(s.begin(), s.end());
  return g;
}

std::vector<Violation> check_section_serializability(std::span<const SectionEvent> history) {
  const PrecedenceGraph g = build_precedence_graph(history);
  std::vector<Violation> out;
  for (auto& comp : strongly_connected(g.succ)) {
    if (comp.size() < 2) continue;
    std::sort(comp.begin(), comp.end());
    Violation v;
    v.kind = ViolationKind::CycleInSections;
    std::set<InstanceId> ids;
    std::string desc;
    for (std::size_t n : comp) {
      ids.insert(g.nodes[n].instance);
      v.witness.push_back(g.commit_seq[n]);
      if (!desc.empty()) desc += ", ";
      desc += std::to_string(g.nodes[n].instance) + "/" + to_string(g.nodes[n].section);
    }
    v.instances.assign(ids.begin(), ids.end());
    v.detail = "sections on a precedence cycle: " + desc;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Violation> check_mssr(std::span<const SectionEvent> history) {
  const auto lives = committed(history);

  // Instance pairs with at least one key-level conflict between their sections.
  struct Touch {
    InstanceId id;
    bool write;
  };
  std::map<Key, std::vector<Touch>> by_key;
  for (const auto& [id, l] : lives) {
    for (const SectionEvent* ev : {l.commit_initial, l.commit_final}) {
      std::set<Key> w, r;
      for (const auto& a : ev->writes) w.insert(a.key);
      for (const auto& a : ev->reads) {
        if (!w.contains(a.key)) r.insert(a.key);
      }
      for (const auto& k : w) by_key[k].push_back({id, true});
      for (const auto& k : r) by_key[k].push_back({id, false});
    }
  }
  std::set<std::pair<InstanceId, InstanceId>> pairs;
  for (const auto& [key, touches] : by_key) {
    for (std::size_t i = 0; i < touches.size(); ++i) {
      for (std::size_t j = i + 1; j < touches.size(); ++j) {
        const auto& a = touches[i];
        const auto& b = touches[j];
        if (a.id == b.id || (!a.write && !b.write)) continue;
        pairs.insert({std::min(a.id, b.id), std::max(a.id, b.id)});
      }
    }
  }

  std::vector<Violation> out;
  for (auto [x, y] : pairs) {
    const Lifecycle* k = &lives.at(x);
    const Lifecycle* j = &lives.at(y);
    InstanceId kid = x, jid = y;
    if (j->commit_initial->seq < k->commit_initial->seq) {
      std::swap(k, j);
      std::swap(kid, jid);
    }
    const auto ki = k->commit_initial->seq, kf = k->commit_final->seq;
    const auto ji = j->commit_initial->seq, jf = j->commit_final->seq;
    if (!(ki < kf && kf < jf)) {
      out.push_back({ViolationKind::MSSRa, {kid, jid}, {ki, kf, jf},
                     "final section of " + std::to_string(kid) + " does not precede final section of " +
                         std::to_string(jid)});
    }
    if (sections_conflict(*k->commit_final, *j->commit_initial) && !(kf < ji)) {
      out.push_back({ViolationKind::MSSRb, {kid, jid}, {kf, ji},
                     "final section of " + std::to_string(kid) + " conflicts with and follows initial section of " +
                         std::to_string(jid)});
    }
  }
  return out;
}

std::vector<Violation> check_msia(std::span<const SectionEvent> history) {
  std::vector<Violation> out;
  for (const auto& [id, l] : lifecycles(history)) {
    if (l.aborted) continue;
    if (!l.commit_final) {
      throw IncompleteHistory("instance " + std::to_string(id) + " has not reached final commit");
    }
    const std::uint64_t f = l.commit_final->seq;
    if (!l.commit_initial) {
      out.push_back({ViolationKind::MSIAOrder, {id}, {f}, "final commit without an initial commit"});
      continue;
    }
    const std::uint64_t i = l.commit_initial->seq;
    if (!(i < f)) {
      out.push_back({ViolationKind::MSIAOrder, {id}, {i, f}, "final commit precedes initial commit"});
    } else if (l.begin_final && l.begin_final->seq < i) {
      out.push_back({ViolationKind::MSIAOrder, {id}, {l.begin_final->seq, i},
                     "final section began before initial commit"});
    }
  }
  return out;
}

}  // namespace croesus
