#pragma once

// Workload generators and the example applications: YCSB-A-like
// transactions, hot-spot update batches, the token-transfer game
// (guesses and apologies) and the campus AR assistant.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "croesus/store.hpp"
#include "croesus/txn.hpp"

namespace croesus {

enum class WorkloadKind : std::uint8_t { YcsbA, HotSpot, TokenTransfer, CampusAR, Increment };
const char* to_string(WorkloadKind kind);
WorkloadKind parse_workload_kind(const std::string& text);

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::YcsbA;
  std::size_t ops_per_txn = 6;
  double write_fraction = 0.5;  // reads take the rest of the mix
  std::uint64_t key_range = 10000;
  std::uint64_t hotspot_size = 1000;
  std::uint64_t seed = 1;
  /// Label classes that trigger transactions. Empty: one class over the
  /// vocabulary the simulator passes in.
  std::map<std::string, std::vector<std::string>> classes;

  void validate() const;
  std::size_t writes_per_txn() const;
  std::size_t reads_per_txn() const { return ops_per_txn - writes_per_txn(); }
};

// -- YCSB-A ----------------------------------------------------------------

/// Key of slot `i` of instance `id`.
Key ycsb_write_key(const WorkloadSpec& spec, InstanceId id, std::size_t i);
Key ycsb_read_key(const WorkloadSpec& spec, InstanceId id, std::size_t i);
/// Reads draw from a pool of min(key_range, 100) pre-seeded keys.
std::uint64_t ycsb_read_pool(const WorkloadSpec& spec);

/// One template per label class; every detection of a member triggers one
/// instance. The final section rewrites the keys when the label was wrong.
std::vector<TransactionTemplate> gen_ycsb_a(const WorkloadSpec& spec,
                                            const std::map<std::string, std::vector<std::string>>& classes);
void seed_ycsb_a(Store& store, const WorkloadSpec& spec);

// -- Hot spot --------------------------------------------------------------

inline constexpr const char* kHotSpotTemplate = "hotspot";

/// Key sets for one batch: every update hits a uniform key of
/// [offset, offset + key_range).
std::vector<std::vector<Key>> gen_hotspot(std::uint64_t key_range, std::size_t txns_per_batch,
                                          std::size_t updates_per_txn, std::uint64_t seed,
                                          std::uint64_t key_offset = 0);
/// Read-modify-write of slots u0..u{n-1}; the final section declares the
/// same keys and confirms.
TransactionTemplate hotspot_template(std::size_t updates_per_txn);
Params hotspot_params(const std::vector<Key>& keys);

// -- Increment (lost update reproduction) ----------------------------------

inline constexpr const char* kIncrementTemplate = "increment";

/// Initial section reads {p:key} and remembers it; final section writes
/// remembered + 1. Triggered by aux kind "increment".
TransactionTemplate increment_template();

// -- Token transfer game ---------------------------------------------------

inline constexpr const char* kTransferTemplate = "transfer";
inline constexpr const char* kPlayersClass = "Players";

struct TransferState {
  std::string from;
  std::string to;
  std::int64_t amount = 0;
  bool applied = false;
  bool retracted = false;

  std::string encode() const;
  static std::optional<TransferState> decode(const std::string& text);
};

Key balance_key(const std::string& player);

/// transfer(from, to, amount): aux kind "transfer" with params from and
/// amount, recipient taken from the center-most detected player. The final
/// section keeps balances non-negative: it undoes the instance and its
/// dependents, re-applies the transfer to the corrected recipient (or
/// refunds), then replays each dependent that still leaves no balance
/// below zero.
void register_token_transfer(TransactionsBank& bank, const std::vector<std::string>& players = {"A", "B", "C", "D"});
void seed_token_balances(Store& store, const std::map<std::string, std::int64_t>& balances = {
                                           {"A", 50}, {"B", 10}, {"C", 0}, {"D", 0}});
std::int64_t token_balance(const Store& store, const std::string& player);

// -- Campus AR ---------------------------------------------------------------

inline constexpr const char* kBuildingInfoTemplate = "t_bldng";
inline constexpr const char* kReserveTemplate = "t_rsrv";
inline constexpr const char* kBuildingsClass = "Buildings";

struct CampusInventory {
  std::map<std::string, std::string> info;                // building -> description
  std::map<std::string, std::vector<std::string>> rooms;  // building -> free rooms
};

CampusInventory default_campus();
Key info_key(const std::string& building);
Key rooms_key(const std::string& building);
std::vector<std::string> split_rooms(const std::string& text);
std::string join_rooms(const std::vector<std::string>& rooms);

/// t_bldng shows building info for every detected building. t_rsrv reserves
/// a study room in the center-most building on a "click" aux input and
/// moves or cancels the reservation once the cloud labels disagree.
void register_campus_ar(TransactionsBank& bank, const std::vector<std::string>& buildings);
void seed_campus(Store& store, const CampusInventory& inventory);

// -- Bundles -----------------------------------------------------------------

struct Workload {
  TransactionsBank bank;
  std::function<void(Store&)> seed;
};

/// Bank and store seeding for a spec. `vocabulary` is the label universe of
/// the trace, used when the spec names no classes.
std::unique_ptr<Workload> make_workload(const WorkloadSpec& spec, const std::vector<std::string>& vocabulary);

}  // namespace croesus
