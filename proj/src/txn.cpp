#include "croesus/txn.hpp"

#include <algorithm>
#include <stdexcept>

namespace croesus {

const char* to_string(SectionKind kind) { return kind == SectionKind::Initial ? "initial" : "final"; }

const char* to_string(ApologyOutcome outcome) {
  switch (outcome) {
    case ApologyOutcome::Confirmed: return "confirmed";
    case ApologyOutcome::Corrected: return "corrected";
    case ApologyOutcome::Retracted: return "retracted";
  }
  return "?";
}

const char* to_string(InstanceState state) {
  switch (state) {
    case InstanceState::Pending: return "pending";
    case InstanceState::InitialCommitted: return "initial_committed";
    case InstanceState::FinalCommitted: return "final_committed";
    case InstanceState::Aborted: return "aborted";
  }
  return "?";
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Begin: return "begin";
    case EventKind::Commit: return "commit";
    case EventKind::Abort: return "abort";
  }
  return "?";
}

std::int64_t SectionContext::read_int(const Key& key, std::int64_t fallback) {
  auto v = read(key);
  return v ? payload_as_int(v->payload) : fallback;
}

std::string SectionContext::read_string(const Key& key, std::string fallback) {
  auto v = read(key);
  return v ? payload_to_string(v->payload) : fallback;
}

Key SectionContext::state_key() const { return "txn:" + std::to_string(instance().id) + ":state"; }

// ---------------------------------------------------------------------------
// Patterns

std::vector<Key> expand_pattern(const std::string& pattern, const PatternBindings& b) {
  std::vector<Key> partial{""};
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    const std::size_t open = pattern.find('{', pos);
    const std::string literal = pattern.substr(pos, open == std::string::npos ? std::string::npos : open - pos);
    for (auto& p : partial) p += literal;
    if (open == std::string::npos) break;
    const std::size_t close = pattern.find('}', open);
    if (close == std::string::npos) throw ProtocolViolation("unterminated placeholder in " + pattern);
    const std::string name = pattern.substr(open + 1, close - open - 1);

    std::vector<std::string> values;
    if (name == "id") {
      values = {std::to_string(b.id)};
    } else if (name == "label") {
      values = b.labels;
    } else if (name == "member") {
      values = b.members;
    } else if (name == "dep") {
      for (auto d : b.deps) values.push_back(std::to_string(d));
    } else if (name.starts_with("p:")) {
      const std::string param = name.substr(2);
      if (!b.params || !b.params->contains(param)) {
        throw ProtocolViolation("pattern " + pattern + " needs missing parameter " + param);
      }
      values = {b.params->at(param)};
    } else {
      throw ProtocolViolation("unknown placeholder {" + name + "} in " + pattern);
    }

    std::vector<Key> next;
    next.reserve(partial.size() * values.size());
    for (const auto& p : partial) {
      for (const auto& v : values) next.push_back(p + v);
    }
    partial = std::move(next);
    pos = close + 1;
  }
  std::sort(partial.begin(), partial.end());
  partial.erase(std::unique(partial.begin(), partial.end()), partial.end());
  return partial;
}

std::vector<Key> expand_patterns(const std::vector<std::string>& patterns, const PatternBindings& b) {
  std::vector<Key> out;
  for (const auto& p : patterns) {
    auto keys = expand_pattern(p, b);
    out.insert(out.end(), keys.begin(), keys.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// TransactionsBank

void TransactionsBank::register_class(const std::string& name, const std::vector<std::string>& members) {
  auto& cls = classes_[name];
  for (const auto& m : members) {
    if (auto it = member_to_class_.find(m); it != member_to_class_.end() && it->second != name) {
      throw std::invalid_argument("label '" + m + "' already belongs to class " + it->second);
    }
    member_to_class_[m] = name;
    cls.insert(m);
  }
}

void TransactionsBank::register_template(TransactionTemplate tpl) {
  if (tpl.id.empty()) throw std::invalid_argument("template id must be non-empty");
  if (templates_.contains(tpl.id)) throw std::invalid_argument("duplicate template id " + tpl.id);
  if (!tpl.trigger.label_class && !tpl.trigger.aux_kind) {
    throw std::invalid_argument("template " + tpl.id + " has no trigger");
  }
  if (tpl.trigger.label_class) classes_.try_emplace(*tpl.trigger.label_class);
  order_.push_back(tpl.id);
  templates_.emplace(tpl.id, std::move(tpl));
}

const TransactionTemplate& TransactionsBank::get(const TemplateId& id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw std::out_of_range("unknown template " + id);
  return it->second;
}

std::optional<std::string> TransactionsBank::class_of(const std::string& label_name) const {
  auto it = member_to_class_.find(label_name);
  if (it == member_to_class_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> TransactionsBank::members(const std::string& class_name) const {
  auto it = classes_.find(class_name);
  if (it == classes_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::vector<TemplateId> TransactionsBank::template_ids() const { return order_; }

std::vector<TriggerBinding> TransactionsBank::bind_label_triggers(const std::vector<Label>& labels) const {
  std::vector<TriggerBinding> out;
  for (const auto& label : labels) {
    const auto cls = class_of(label.name);
    if (!cls) continue;
    for (const auto& id : order_) {
      const auto& trig = templates_.at(id).trigger;
      if (!trig.aux_kind && trig.label_class == cls) out.push_back({id, {label}});
    }
  }
  return out;
}

std::vector<TriggerBinding> TransactionsBank::bind_triggers(const std::vector<Label>& labels,
                                                            const std::optional<AuxInput>& aux) const {
  std::vector<TriggerBinding> out = bind_label_triggers(labels);
  if (!aux) return out;
  for (const auto& id : order_) {
    const auto& trig = templates_.at(id).trigger;
    if (trig.aux_kind != aux->kind) continue;
    if (!trig.label_class) {
      out.push_back({id, {}});
      continue;
    }
    std::vector<Label> coupled;
    for (const auto& l : labels) {
      if (class_of(l.name) == trig.label_class) coupled.push_back(l);
    }
    if (!coupled.empty()) out.push_back({id, std::move(coupled)});
  }
  return out;
}

std::set<TemplateId> TransactionsBank::lookup_triggers(const std::vector<Label>& labels,
                                                       const std::optional<AuxInput>& aux) const {
  std::set<TemplateId> out;
  for (auto& b : bind_triggers(labels, aux)) out.insert(b.template_id);
  return out;
}

// ---------------------------------------------------------------------------
// Instances and history

void TransactionInstance::transition(InstanceState next) {
  const bool ok = (state == InstanceState::Pending &&
                   (next == InstanceState::InitialCommitted || next == InstanceState::Aborted)) ||
                  (state == InstanceState::InitialCommitted && next == InstanceState::FinalCommitted);
  if (!ok) {
    throw ProtocolViolation("instance " + std::to_string(id) + ": illegal transition " +
                            to_string(state) + " -> " + to_string(next));
  }
  state = next;
}

std::uint64_t History::record(SectionEvent event) {
  Stage& stage = stage_[event.instance];
  const auto bad = [&] {
    return ProtocolViolation("instance " + std::to_string(event.instance) + ": out-of-order " +
                             to_string(event.kind) + "(" + to_string(event.section) + ")");
  };
  const bool initial = event.section == SectionKind::Initial;
  switch (event.kind) {
    case EventKind::Begin:
      if (initial && stage == Stage::None) {
        stage = Stage::InitialBegun;
      } else if (!initial && stage == Stage::InitialCommitted) {
        stage = Stage::FinalBegun;
      } else {
        throw bad();
      }
      break;
    case EventKind::Commit:
      if (initial && stage == Stage::InitialBegun) {
        stage = Stage::InitialCommitted;
      } else if (!initial && stage == Stage::FinalBegun) {
        stage = Stage::Done;
      } else {
        throw bad();
      }
      break;
    case EventKind::Abort:
      if (initial && (stage == Stage::None || stage == Stage::InitialBegun)) {
        stage = Stage::Aborted;
      } else {
        throw bad();
      }
      break;
  }
  event.seq = events_.size() + 1;
  events_.push_back(std::move(event));
  return events_.back().seq;
}

std::vector<InstanceId> read_dependents(std::span<const SectionEvent> history, InstanceId txn) {
  bool known = false;
  // (key, version) -> writing instance, and per-instance commit reads.
  std::map<std::pair<Key, std::uint64_t>, InstanceId> writer;
  for (const auto& ev : history) {
    if (ev.kind != EventKind::Commit) continue;
    if (ev.instance == txn) known = true;
    for (const auto& w : ev.writes) writer[{w.key, w.version}] = ev.instance;
  }
  if (!known) {
    throw std::invalid_argument("instance " + std::to_string(txn) + " has no committed section");
  }

  std::set<InstanceId> tainted{txn};
  std::vector<InstanceId> order;
  // Commit events are in history order and a reader always commits after the
  // version it read was installed, so one forward pass closes the relation.
  for (const auto& ev : history) {
    if (ev.kind != EventKind::Commit || tainted.contains(ev.instance)) continue;
    for (const auto& r : ev.reads) {
      auto it = writer.find({r.key, r.version});
      if (it != writer.end() && tainted.contains(it->second)) {
        tainted.insert(ev.instance);
        order.push_back(ev.instance);
        break;
      }
    }
  }
  return order;
}

}  // namespace croesus
