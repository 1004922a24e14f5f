#pragma once

// Offline verifiers over recorded section histories.
//
// A section is identified by (instance, kind) and placed in the history at
// its Commit event. Aborted instances are left out of every check. All three
// checkers throw IncompleteHistory when an instance started but neither
// aborted nor reached final commit.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "croesus/txn.hpp"

namespace croesus {

class IncompleteHistory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ViolationKind : std::uint8_t { CycleInSections, MSSRa, MSSRb, MSIAOrder };
const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind = ViolationKind::CycleInSections;
  std::vector<InstanceId> instances;
  std::vector<std::uint64_t> witness;  // seq numbers of events in the checked history
  std::string detail;
};

struct SectionRef {
  InstanceId instance = 0;
  SectionKind section = SectionKind::Initial;
  auto operator<=>(const SectionRef&) const = default;
};

/// Section-level precedence graph. Edges come from the recorded versions:
/// writer(v) -> writer(next), writer(v) -> reader(v), reader(v) -> writer(next),
/// plus the program-order edge s^i -> s^f of every instance.
struct PrecedenceGraph {
  std::vector<SectionRef> nodes;
  std::vector<std::uint64_t> commit_seq;  // parallel to nodes
  std::vector<std::vector<std::size_t>> succ;

  std::size_t edge_count() const;
};

PrecedenceGraph build_precedence_graph(std::span<const SectionEvent> history);

std::vector<Violation> check_section_serializability(std::span<const SectionEvent> history);
std::vector<Violation> check_mssr(std::span<const SectionEvent> history);
std::vector<Violation> check_msia(std::span<const SectionEvent> history);

/// Key-level conflict between two recorded sections (one side writes).
bool sections_conflict(const SectionEvent& a, const SectionEvent& b);

}  // namespace croesus
