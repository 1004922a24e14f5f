#pragma once

// Multi-stage transaction model: section programs with declared access sets,
// templates, the transactions bank, instances and the section history.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "croesus/detect.hpp"
#include "croesus/store.hpp"

namespace croesus {

using TemplateId = std::string;
using Params = std::map<std::string, std::string>;

enum class SectionKind : std::uint8_t { Initial, Final };
const char* to_string(SectionKind kind);

enum class ApologyOutcome : std::uint8_t { Confirmed, Corrected, Retracted };
const char* to_string(ApologyOutcome outcome);

/// What a final section tells the client once it knows the cloud labels.
struct ApologyReport {
  InstanceId instance = 0;
  ApologyOutcome outcome = ApologyOutcome::Confirmed;
  std::vector<Key> retracted_writes;
  std::vector<Key> compensating_writes;
  std::string message;
};

struct TransactionInstance;

/// The only door a section body has to the database. Every access is checked
/// against the section's instantiated declared sets.
class SectionContext {
 public:
  virtual ~SectionContext() = default;

  virtual const TransactionInstance& instance() const = 0;
  virtual SectionKind section() const = 0;
  virtual std::optional<Value> read(const Key& key) = 0;
  virtual void write(const Key& key, Payload payload) = 0;
  virtual void respond(std::string text) = 0;
  /// Instances that transitively read this instance's writes, in history
  /// order. Only meaningful in a final section.
  virtual std::vector<InstanceId> dependents() const = 0;
  virtual void report(ApologyOutcome outcome, std::vector<Key> retracted,
                      std::vector<Key> compensating, std::string message) = 0;

  std::int64_t read_int(const Key& key, std::int64_t fallback = 0);
  std::string read_string(const Key& key, std::string fallback = {});
  /// The instance id as a key fragment ("txn:<id>:state" etc).
  Key state_key() const;
};

/// Declared access sets are key patterns. Supported placeholders:
///   {id}      the instance id
///   {label}   names of the section's label input
///   {member}  every member of the template's trigger class
///   {p:NAME}  instance parameter NAME
///   {dep}     ids returned by the dependency query (final sections only)
/// A pattern with several list placeholders expands to their product.
struct SectionProgram {
  std::vector<std::string> reads;
  std::vector<std::string> writes;
  std::function<void(SectionContext&)> body;
};

struct PatternBindings {
  InstanceId id = 0;
  std::vector<std::string> labels;
  std::vector<std::string> members;
  const Params* params = nullptr;
  std::vector<InstanceId> deps;
};

std::vector<Key> expand_pattern(const std::string& pattern, const PatternBindings& bindings);
std::vector<Key> expand_patterns(const std::vector<std::string>& patterns,
                                 const PatternBindings& bindings);

struct Trigger {
  std::optional<std::string> label_class;
  std::optional<std::string> aux_kind;
};

using ParamBinder = std::function<Params(InstanceId, const std::vector<Label>&,
                                         const std::optional<AuxInput>&)>;

struct TransactionTemplate {
  TemplateId id;
  Trigger trigger;
  SectionProgram initial;
  SectionProgram final_;
  /// Derives instance parameters; aux params are used when absent.
  ParamBinder bind_params;
};

struct TriggerBinding {
  TemplateId template_id;
  std::vector<Label> labels;
};

class TransactionsBank {
 public:
  /// Classes are disjoint: a name may belong to one class only.
  void register_class(const std::string& name, const std::vector<std::string>& members);
  void register_template(TransactionTemplate tpl);

  std::set<TemplateId> lookup_triggers(const std::vector<Label>& labels,
                                       const std::optional<AuxInput>& aux) const;
  /// One binding per (label, template) for label-triggered rows; one per
  /// template for auxiliary rows, carrying the labels of the coupled class.
  std::vector<TriggerBinding> bind_triggers(const std::vector<Label>& labels,
                                            const std::optional<AuxInput>& aux) const;
  /// Label-triggered rows only; used for labels only the cloud found.
  std::vector<TriggerBinding> bind_label_triggers(const std::vector<Label>& labels) const;

  const TransactionTemplate& get(const TemplateId& id) const;
  bool contains(const TemplateId& id) const { return templates_.contains(id); }
  std::optional<std::string> class_of(const std::string& label_name) const;
  std::vector<std::string> members(const std::string& class_name) const;
  std::vector<TemplateId> template_ids() const;

 private:
  std::map<std::string, std::set<std::string>> classes_;
  std::map<std::string, std::string> member_to_class_;
  std::map<TemplateId, TransactionTemplate> templates_;
  std::vector<TemplateId> order_;
};

enum class InstanceState : std::uint8_t { Pending, InitialCommitted, FinalCommitted, Aborted };
const char* to_string(InstanceState state);

struct TransactionInstance {
  InstanceId id = 0;
  TemplateId template_id;
  FrameId frame = 0;
  std::vector<Label> edge_labels;
  std::vector<LabelMatch> matches;  // final-section input, set when known
  std::optional<AuxInput> aux;
  Params params;
  InstanceState state = InstanceState::Pending;
  std::vector<std::string> initial_response;
  std::vector<std::string> final_response;
  std::optional<ApologyReport> apology;

  /// Enforces Pending -> InitialCommitted -> FinalCommitted | Pending -> Aborted.
  void transition(InstanceState next);
};

enum class EventKind : std::uint8_t { Begin, Commit, Abort };
const char* to_string(EventKind kind);

struct Access {
  Key key;
  std::uint64_t version = 0;  // read: version observed; write: version produced

  bool operator==(const Access&) const = default;
};

struct SectionEvent {
  std::uint64_t seq = 0;
  InstanceId instance = 0;
  SectionKind section = SectionKind::Initial;
  EventKind kind = EventKind::Begin;
  double time_ms = 0.0;
  std::vector<Access> reads;
  std::vector<Access> writes;

  bool operator==(const SectionEvent&) const = default;
};

/// Append-only, densely sequenced record of section events.
class History {
 public:
  /// Assigns the next sequence number. Throws ProtocolViolation when the event
  /// breaks Begin(I) < Commit(I) < Begin(F) < Commit(F) for its instance.
  std::uint64_t record(SectionEvent event);

  const std::vector<SectionEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

 private:
  enum class Stage : std::uint8_t { None, InitialBegun, InitialCommitted, FinalBegun, Done, Aborted };
  std::vector<SectionEvent> events_;
  std::map<InstanceId, Stage> stage_;
};

inline std::uint64_t record_event(History& history, SectionEvent event) {
  return history.record(std::move(event));
}

/// Instances that read, directly or transitively, a version written by
/// `txn`, in order of first dependent commit. Reads-from is established from
/// the versions recorded on commit events. Throws std::invalid_argument if
/// `txn` has no committed section in the history.
std::vector<InstanceId> read_dependents(std::span<const SectionEvent> history, InstanceId txn);

}  // namespace croesus
