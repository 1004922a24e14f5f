#include "croesus/workload.hpp"

#include <algorithm>
#include <random>
#include <sstream>
#include <stdexcept>

namespace croesus {

const char* to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::YcsbA: return "ycsb_a";
    case WorkloadKind::HotSpot: return "hotspot";
    case WorkloadKind::TokenTransfer: return "token_transfer";
    case WorkloadKind::CampusAR: return "campus_ar";
    case WorkloadKind::Increment: return "increment";
  }
  return "?";
}

WorkloadKind parse_workload_kind(const std::string& text) {
  for (auto k : {WorkloadKind::YcsbA, WorkloadKind::HotSpot, WorkloadKind::TokenTransfer, WorkloadKind::CampusAR,
                 WorkloadKind::Increment}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown workload kind '" + text + "'");
}

void WorkloadSpec::validate() const {
  if (ops_per_txn < 1) throw std::invalid_argument("ops_per_txn must be >= 1");
  if (!(write_fraction >= 0.0 && write_fraction <= 1.0)) {
    throw std::invalid_argument("write_fraction must be in [0,1] (reads take 1 - write_fraction)");
  }
  if (key_range < 1) throw std::invalid_argument("key_range must be >= 1");
  if (hotspot_size < 1) throw std::invalid_argument("hotspot_size must be >= 1");
}

std::size_t WorkloadSpec::writes_per_txn() const {
  const auto w = static_cast<std::size_t>(static_cast<double>(ops_per_txn) * write_fraction + 0.5);
  return std::min(w, ops_per_txn);
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x6A09E667F3BCC909ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string slot(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

std::vector<std::string> slot_patterns(const char* prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("{p:" + slot(prefix, i) + "}");
  return out;
}

// Match for the edge label at `idx`, if the instance has one.
const LabelMatch* match_at(const TransactionInstance& inst, std::size_t idx) {
  return idx < inst.matches.size() ? &inst.matches[idx] : nullptr;
}

bool all_confirmed(const TransactionInstance& inst) {
  return std::all_of(inst.matches.begin(), inst.matches.end(),
                     [](const LabelMatch& m) { return m.kind == MatchKind::SameName; });
}

// Name the cloud gives the object, or nullopt when the object is not there
// or not a member of `cls`.
std::optional<std::string> corrected_name(const LabelMatch& m, const TransactionsBank& bank, const std::string& cls) {
  if (m.kind == MatchKind::SameName) return m.edge.name;
  if (m.kind == MatchKind::NoOverlap || !m.cloud) return std::nullopt;
  if (bank.class_of(m.cloud->name) != cls) return std::nullopt;
  return m.cloud->name;
}

}  // namespace

// ---------------------------------------------------------------------------
// YCSB-A

std::uint64_t ycsb_read_pool(const WorkloadSpec& spec) { return std::min<std::uint64_t>(spec.key_range, 100); }

Key ycsb_write_key(const WorkloadSpec& spec, InstanceId id, std::size_t i) {
  return "ycsb:" + std::to_string(mix(mix(spec.seed, id), 2 * i) % spec.key_range);
}

Key ycsb_read_key(const WorkloadSpec& spec, InstanceId id, std::size_t i) {
  return "ycsb:" + std::to_string(mix(mix(spec.seed, id), 2 * i + 1) % ycsb_read_pool(spec));
}

std::vector<TransactionTemplate> gen_ycsb_a(const WorkloadSpec& spec,
                                            const std::map<std::string, std::vector<std::string>>& classes) {
  spec.validate();
  const std::size_t nw = spec.writes_per_txn();
  const std::size_t nr = spec.reads_per_txn();
  std::vector<TransactionTemplate> out;
  for (const auto& [cls, members] : classes) {
    TransactionTemplate t;
    t.id = "ycsb_a:" + cls;
    t.trigger.label_class = cls;
    t.bind_params = [spec, nw, nr](InstanceId id, const std::vector<Label>&, const std::optional<AuxInput>&) {
      Params p;
      for (std::size_t i = 0; i < nw; ++i) p[slot("w", i)] = ycsb_write_key(spec, id, i);
      for (std::size_t i = 0; i < nr; ++i) p[slot("r", i)] = ycsb_read_key(spec, id, i);
      return p;
    };
    t.initial.reads = slot_patterns("r", nr);
    t.initial.writes = slot_patterns("w", nw);
    t.initial.body = [nw, nr](SectionContext& ctx) {
      const auto& inst = ctx.instance();
      for (std::size_t i = 0; i < nr; ++i) ctx.read(inst.params.at(slot("r", i)));
      const std::string label = inst.edge_labels.empty() ? "" : inst.edge_labels.front().name;
      for (std::size_t i = 0; i < nw; ++i) {
        ctx.write(inst.params.at(slot("w", i)), "i" + std::to_string(inst.id) + ":" + label);
      }
    };
    t.final_.writes = slot_patterns("w", nw);
    t.final_.body = [nw](SectionContext& ctx) {
      const auto& inst = ctx.instance();
      if (all_confirmed(inst)) {
        ctx.report(ApologyOutcome::Confirmed, {}, {}, "");
        return;
      }
      const LabelMatch* m = match_at(inst, 0);
      const bool gone = !m || !m->cloud;
      const std::string label = gone ? std::string("none") : m->cloud->name;
      std::vector<Key> rewritten;
      for (std::size_t i = 0; i < nw; ++i) {
        const Key& k = inst.params.at(slot("w", i));
        ctx.write(k, "f" + std::to_string(inst.id) + ":" + label);
        rewritten.push_back(k);
      }
      ctx.report(gone ? ApologyOutcome::Retracted : ApologyOutcome::Corrected, gone ? rewritten : std::vector<Key>{},
                 gone ? std::vector<Key>{} : rewritten, "rewrote with cloud label " + label);
    };
    out.push_back(std::move(t));
  }
  return out;
}

void seed_ycsb_a(Store& store, const WorkloadSpec& spec) {
  for (std::uint64_t i = 0; i < ycsb_read_pool(spec); ++i) store.seed("ycsb:" + std::to_string(i), "seed");
}

// ---------------------------------------------------------------------------
// Hot spot

std::vector<std::vector<Key>> gen_hotspot(std::uint64_t key_range, std::size_t txns_per_batch,
                                          std::size_t updates_per_txn, std::uint64_t seed,
                                          std::uint64_t key_offset) {
  if (key_range < 1) throw std::invalid_argument("hot spot key range must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> pick(0, key_range - 1);
  std::vector<std::vector<Key>> out(txns_per_batch);
  for (auto& keys : out) {
    for (std::size_t u = 0; u < updates_per_txn; ++u) keys.push_back("hot:" + std::to_string(key_offset + pick(rng)));
  }
  return out;
}

TransactionTemplate hotspot_template(std::size_t updates_per_txn) {
  TransactionTemplate t;
  t.id = kHotSpotTemplate;
  t.trigger.aux_kind = "update";
  t.initial.writes = slot_patterns("u", updates_per_txn);
  t.initial.body = [updates_per_txn](SectionContext& ctx) {
    std::set<Key> done;
    for (std::size_t i = 0; i < updates_per_txn; ++i) {
      const Key& k = ctx.instance().params.at(slot("u", i));
      if (!done.insert(k).second) continue;
      ctx.write(k, ctx.read_int(k) + 1);
    }
  };
  t.final_.writes = slot_patterns("u", updates_per_txn);
  t.final_.body = [](SectionContext& ctx) { ctx.report(ApologyOutcome::Confirmed, {}, {}, ""); };
  return t;
}

Params hotspot_params(const std::vector<Key>& keys) {
  Params p;
  for (std::size_t i = 0; i < keys.size(); ++i) p[slot("u", i)] = keys[i];
  return p;
}

// ---------------------------------------------------------------------------
// Increment

TransactionTemplate increment_template() {
  TransactionTemplate t;
  t.id = kIncrementTemplate;
  t.trigger.aux_kind = "increment";
  t.initial.reads = {"{p:key}"};
  t.initial.writes = {"txn:{id}:state"};
  t.initial.body = [](SectionContext& ctx) {
    const auto seen = ctx.read_int(ctx.instance().params.at("key"));
    ctx.write(ctx.state_key(), seen);
  };
  t.final_.reads = {"txn:{id}:state"};
  t.final_.writes = {"{p:key}"};
  t.final_.body = [](SectionContext& ctx) {
    const auto seen = ctx.read_int(ctx.state_key());
    ctx.write(ctx.instance().params.at("key"), seen + 1);
    ctx.report(ApologyOutcome::Confirmed, {}, {}, "");
  };
  return t;
}

// ---------------------------------------------------------------------------
// Token transfer

std::string TransferState::encode() const {
  return from + "," + to + "," + std::to_string(amount) + "," + (applied ? "1" : "0") + "," + (retracted ? "1" : "0");
}

std::optional<TransferState> TransferState::decode(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
  if (parts.size() != 5) return std::nullopt;
  TransferState s;
  s.from = parts[0];
  s.to = parts[1];
  try {
    s.amount = std::stoll(parts[2]);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  s.applied = parts[3] == "1";
  s.retracted = parts[4] == "1";
  return s;
}

Key balance_key(const std::string& player) { return "bal:" + player; }

namespace {

void transfer_final(SectionContext& ctx, const TransactionsBank& bank) {
  const auto& inst = ctx.instance();
  auto st = TransferState::decode(ctx.read_string(ctx.state_key()));
  if (!st || !st->applied) {
    ctx.report(ApologyOutcome::Confirmed, {}, {}, "nothing was transferred");
    return;
  }
  if (st->retracted) {
    ctx.report(ApologyOutcome::Retracted, {}, {}, "already retracted by an earlier apology");
    return;
  }
  const auto idx = center_most(inst.edge_labels);
  const LabelMatch* m = idx ? match_at(inst, *idx) : nullptr;
  const std::optional<std::string> truth = m ? corrected_name(*m, bank, kPlayersClass) : std::optional{st->to};
  if (truth == st->to) {
    ctx.report(ApologyOutcome::Confirmed, {}, {}, "");
    return;
  }

  std::map<std::string, std::int64_t> bal;
  auto balance = [&](const std::string& p) -> std::int64_t& {
    auto it = bal.find(p);
    if (it == bal.end()) it = bal.emplace(p, ctx.read_int(balance_key(p))).first;
    return it->second;
  };

  struct Dep {
    InstanceId id;
    TransferState st;
  };
  std::vector<Dep> deps;
  for (InstanceId d : ctx.dependents()) {
    auto ds = TransferState::decode(ctx.read_string("txn:" + std::to_string(d) + ":state"));
    if (ds && ds->applied && !ds->retracted) deps.push_back({d, *ds});
  }

  // Undo the dependents, newest first, then ourselves.
  for (auto it = deps.rbegin(); it != deps.rend(); ++it) {
    balance(it->st.to) -= it->st.amount;
    balance(it->st.from) += it->st.amount;
  }
  balance(st->to) -= st->amount;
  balance(st->from) += st->amount;

  std::vector<Key> retracted{ctx.state_key()};
  std::string message;
  if (truth) {
    balance(st->from) -= st->amount;
    balance(*truth) += st->amount;
    message = "sent to " + *truth + " instead of " + st->to;
    st->to = *truth;
  } else {
    st->applied = false;
    st->retracted = true;
    message = "transfer to " + st->to + " cancelled";
  }

  // Replay in history order; keep whatever still leaves everyone >= 0.
  for (auto& d : deps) {
    if (balance(d.st.from) >= d.st.amount) {
      balance(d.st.from) -= d.st.amount;
      balance(d.st.to) += d.st.amount;
    } else {
      d.st.retracted = true;
      const Key k = "txn:" + std::to_string(d.id) + ":state";
      ctx.write(k, d.st.encode());
      retracted.push_back(k);
      message += "; retracted transfer " + std::to_string(d.id) + " (" + d.st.from + " to " + d.st.to + ")";
    }
  }

  std::vector<Key> compensating;
  for (const auto& [p, v] : bal) {
    if (v < 0) throw ProtocolViolation("apology would leave " + p + " negative");
    ctx.write(balance_key(p), v);
    compensating.push_back(balance_key(p));
  }
  ctx.write(ctx.state_key(), st->encode());
  ctx.respond(message);
  ctx.report(truth ? ApologyOutcome::Corrected : ApologyOutcome::Retracted, std::move(retracted),
             std::move(compensating), message);
}

}  // namespace

void register_token_transfer(TransactionsBank& bank, const std::vector<std::string>& players) {
  bank.register_class(kPlayersClass, players);
  TransactionTemplate t;
  t.id = kTransferTemplate;
  t.trigger.label_class = kPlayersClass;
  t.trigger.aux_kind = "transfer";
  t.bind_params = [](InstanceId, const std::vector<Label>& labels, const std::optional<AuxInput>&) {
    Params p;
    if (auto i = center_most(labels)) p["to"] = labels[*i].name;
    return p;
  };
  t.initial.reads = {"bal:{p:from}", "bal:{p:to}"};
  t.initial.writes = {"bal:{p:from}", "bal:{p:to}", "txn:{id}:state"};
  t.initial.body = [](SectionContext& ctx) {
    const auto& p = ctx.instance().params;
    TransferState st;
    st.from = p.at("from");
    st.to = p.at("to");
    st.amount = std::stoll(p.at("amount"));
    const auto have = ctx.read_int(balance_key(st.from));
    if (st.amount < 0 || have < st.amount || st.from == st.to) {
      ctx.respond("transfer refused");
    } else {
      ctx.write(balance_key(st.from), have - st.amount);
      ctx.write(balance_key(st.to), ctx.read_int(balance_key(st.to)) + st.amount);
      st.applied = true;
      ctx.respond("sent " + std::to_string(st.amount) + " to " + st.to);
    }
    ctx.write(ctx.state_key(), st.encode());
  };
  t.final_.reads = {"bal:{member}", "txn:{id}:state", "txn:{dep}:state"};
  t.final_.writes = {"bal:{member}", "txn:{id}:state", "txn:{dep}:state"};
  t.final_.body = [&bank](SectionContext& ctx) { transfer_final(ctx, bank); };
  bank.register_template(std::move(t));
}

void seed_token_balances(Store& store, const std::map<std::string, std::int64_t>& balances) {
  for (const auto& [p, v] : balances) store.seed(balance_key(p), v);
}

std::int64_t token_balance(const Store& store, const std::string& player) {
  auto v = store.peek(balance_key(player));
  return v ? payload_as_int(v->payload) : 0;
}

// ---------------------------------------------------------------------------
// Campus AR

CampusInventory default_campus() {
  CampusInventory inv;
  for (const std::string b : {"Library", "Gym", "Hall", "Lab"}) {
    inv.info[b] = b + ": open 8-22";
    inv.rooms[b] = {b + "-101", b + "-102"};
  }
  return inv;
}

Key info_key(const std::string& building) { return "info:" + building; }
Key rooms_key(const std::string& building) { return "rooms:" + building; }

std::vector<std::string> split_rooms(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string r; std::getline(ss, r, ',');) {
    if (!r.empty()) out.push_back(r);
  }
  return out;
}

std::string join_rooms(const std::vector<std::string>& rooms) {
  std::string out;
  for (const auto& r : rooms) out += (out.empty() ? "" : ",") + r;
  return out;
}

void register_campus_ar(TransactionsBank& bank, const std::vector<std::string>& buildings) {
  bank.register_class(kBuildingsClass, buildings);

  TransactionTemplate info;
  info.id = kBuildingInfoTemplate;
  info.trigger.label_class = kBuildingsClass;
  info.initial.reads = {"info:{label}"};
  info.initial.body = [](SectionContext& ctx) {
    for (const auto& l : ctx.instance().edge_labels) ctx.respond(ctx.read_string(info_key(l.name), "no info"));
  };
  info.final_.reads = {"info:{label}"};
  info.final_.body = [&bank](SectionContext& ctx) {
    const auto& inst = ctx.instance();
    bool corrected = false, withdrawn = false;
    for (const auto& m : inst.matches) {
      const auto truth = corrected_name(m, bank, kBuildingsClass);
      if (truth == m.edge.name) continue;
      if (truth) {
        ctx.respond("correction: " + ctx.read_string(info_key(*truth), "no info"));
        corrected = true;
      } else {
        ctx.respond("withdrawn: " + m.edge.name);
        withdrawn = true;
      }
    }
    if (corrected) {
      ctx.report(ApologyOutcome::Corrected, {}, {}, "building info corrected");
    } else if (withdrawn) {
      ctx.report(ApologyOutcome::Retracted, {}, {}, "building info withdrawn");
    } else {
      ctx.report(ApologyOutcome::Confirmed, {}, {}, "");
    }
  };
  bank.register_template(std::move(info));

  TransactionTemplate rsrv;
  rsrv.id = kReserveTemplate;
  rsrv.trigger.label_class = kBuildingsClass;
  rsrv.trigger.aux_kind = "click";
  rsrv.bind_params = [](InstanceId id, const std::vector<Label>& labels, const std::optional<AuxInput>& aux) {
    Params p;
    if (auto i = center_most(labels)) p["building"] = labels[*i].name;
    if (!aux || !aux->params.contains("user")) p["user"] = "user" + std::to_string(id);
    return p;
  };
  rsrv.initial.reads = {"rooms:{p:building}"};
  rsrv.initial.writes = {"rooms:{p:building}", "txn:{id}:state"};
  rsrv.initial.body = [](SectionContext& ctx) {
    const std::string b = ctx.instance().params.at("building");
    auto free = split_rooms(ctx.read_string(rooms_key(b)));
    if (free.empty()) {
      ctx.respond("none available");
      ctx.write(ctx.state_key(), std::string());
      return;
    }
    const std::string room = free.front();
    free.erase(free.begin());
    ctx.write(rooms_key(b), join_rooms(free));
    ctx.write(ctx.state_key(), b + "," + room);
    ctx.respond("reserved " + room);
  };
  rsrv.final_.reads = {"rooms:{label}", "txn:{id}:state"};
  rsrv.final_.writes = {"rooms:{label}", "txn:{id}:state"};
  rsrv.final_.body = [&bank](SectionContext& ctx) {
    const auto& inst = ctx.instance();
    const auto idx = center_most(inst.edge_labels);
    const LabelMatch* m = idx ? match_at(inst, *idx) : nullptr;
    const std::string booked_in = inst.params.at("building");
    const auto truth = m ? corrected_name(*m, bank, kBuildingsClass) : std::optional{booked_in};
    if (truth == booked_in) {
      ctx.report(ApologyOutcome::Confirmed, {}, {}, "");
      return;
    }
    const auto held = split_rooms(ctx.read_string(ctx.state_key()));  // {building, room} or empty
    std::vector<Key> retracted, compensating;
    if (held.size() == 2) {
      auto free = split_rooms(ctx.read_string(rooms_key(held[0])));
      free.push_back(held[1]);
      std::sort(free.begin(), free.end());
      ctx.write(rooms_key(held[0]), join_rooms(free));
      retracted.push_back(rooms_key(held[0]));
    }
    if (truth) {
      auto free = split_rooms(ctx.read_string(rooms_key(*truth)));
      if (!free.empty()) {
        const std::string room = free.front();
        free.erase(free.begin());
        ctx.write(rooms_key(*truth), join_rooms(free));
        ctx.write(ctx.state_key(), *truth + "," + room);
        compensating.push_back(rooms_key(*truth));
        ctx.respond("sorry, reservation moved to " + room);
        ctx.report(ApologyOutcome::Corrected, std::move(retracted), std::move(compensating),
                   "reservation moved to " + room);
        return;
      }
    }
    ctx.write(ctx.state_key(), std::string());
    ctx.respond("sorry, reservation cancelled");
    ctx.report(ApologyOutcome::Retracted, std::move(retracted), {}, "reservation cancelled");
  };
  bank.register_template(std::move(rsrv));
}

void seed_campus(Store& store, const CampusInventory& inventory) {
  for (const auto& [b, text] : inventory.info) store.seed(info_key(b), text);
  for (const auto& [b, rooms] : inventory.rooms) store.seed(rooms_key(b), join_rooms(rooms));
}

// ---------------------------------------------------------------------------

std::unique_ptr<Workload> make_workload(const WorkloadSpec& spec, const std::vector<std::string>& vocabulary) {
  spec.validate();
  auto w = std::make_unique<Workload>();
  auto class_or = [&](const std::string& name, std::vector<std::string> fallback) {
    auto it = spec.classes.find(name);
    return it == spec.classes.end() ? fallback : it->second;
  };
  switch (spec.kind) {
    case WorkloadKind::YcsbA: {
      auto classes = spec.classes;
      if (classes.empty()) classes["Objects"] = vocabulary;
      for (const auto& [c, members] : classes) w->bank.register_class(c, members);
      for (auto& t : gen_ycsb_a(spec, classes)) w->bank.register_template(std::move(t));
      w->seed = [spec](Store& s) { seed_ycsb_a(s, spec); };
      break;
    }
    case WorkloadKind::HotSpot:
      w->bank.register_template(hotspot_template(spec.ops_per_txn));
      w->seed = [](Store&) {};
      break;
    case WorkloadKind::Increment:
      w->bank.register_template(increment_template());
      w->seed = [](Store& s) { s.seed("x", std::int64_t{0}); };
      break;
    case WorkloadKind::TokenTransfer: {
      const auto players = class_or(kPlayersClass, {"A", "B", "C", "D"});
      register_token_transfer(w->bank, players);
      w->seed = [](Store& s) { seed_token_balances(s); };
      break;
    }
    case WorkloadKind::CampusAR: {
      CampusInventory inv = default_campus();
      const auto buildings = class_or(kBuildingsClass, {"Library", "Gym", "Hall", "Lab"});
      for (const auto& b : buildings) {
        inv.info.try_emplace(b, b + ": open 8-22");
        inv.rooms.try_emplace(b, std::vector<std::string>{b + "-101", b + "-102"});
      }
      register_campus_ar(w->bank, buildings);
      w->seed = [inv](Store& s) { seed_campus(s, inv); };
      break;
    }
  }
  return w;
}

}  // namespace croesus
