#include <gtest/gtest.h>

#include <random>

#include "croesus/txn.hpp"

using namespace croesus;

namespace {

TransactionTemplate noop(const std::string& id, Trigger trig) {
  TransactionTemplate t;
  t.id = id;
  t.trigger = std::move(trig);
  t.initial.body = [](SectionContext&) {};
  t.final_.body = [](SectionContext&) {};
  return t;
}

Label lbl(std::string name) { return {std::move(name), 0.9, {0.1, 0.1, 0.3, 0.3}}; }

SectionEvent commit(InstanceId id, SectionKind s, std::vector<Access> reads, std::vector<Access> writes) {
  return {0, id, s, EventKind::Commit, 0.0, std::move(reads), std::move(writes)};
}

}  // namespace

TEST(Patterns, ExpandPlaceholders) {
  Params params{{"key", "x"}};
  PatternBindings b{7, {"car", "bus"}, {"A", "B"}, &params, {3, 4}};
  EXPECT_EQ(expand_pattern("txn:{id}:state", b), (std::vector<Key>{"txn:7:state"}));
  EXPECT_EQ(expand_pattern("count:{label}", b), (std::vector<Key>{"count:bus", "count:car"}));  // sorted
  EXPECT_EQ(expand_pattern("{p:key}", b), (std::vector<Key>{"x"}));
  EXPECT_EQ(expand_pattern("d{dep}", b), (std::vector<Key>{"d3", "d4"}));
  EXPECT_EQ(expand_pattern("{member}/{label}", b).size(), 4u);
  EXPECT_EQ(expand_patterns({"a", "a", "b"}, b), (std::vector<Key>{"a", "b"}));
  EXPECT_THROW(expand_pattern("{p:nope}", b), ProtocolViolation);
  EXPECT_THROW(expand_pattern("{what}", b), ProtocolViolation);
  EXPECT_THROW(expand_pattern("{id", b), ProtocolViolation);
}

TEST(Bank, LabelAndAuxTriggers) {
  TransactionsBank bank;
  bank.register_class("Buildings", {"Library", "Gym"});
  bank.register_template(noop("info", {"Buildings", std::nullopt}));
  bank.register_template(noop("reserve", {"Buildings", "click"}));
  bank.register_template(noop("ping", {std::nullopt, "ping"}));

  EXPECT_EQ(bank.lookup_triggers({lbl("Library")}, std::nullopt), (std::set<TemplateId>{"info"}));
  // the aux row needs both the click and a detected member
  EXPECT_EQ(bank.lookup_triggers({lbl("Library")}, AuxInput{"click", {}}), (std::set<TemplateId>{"info", "reserve"}));
  EXPECT_TRUE(bank.lookup_triggers({lbl("tree")}, AuxInput{"click", {}}).empty());
  EXPECT_EQ(bank.lookup_triggers({}, AuxInput{"ping", {}}), (std::set<TemplateId>{"ping"}));

  auto b = bank.bind_triggers({lbl("Library"), lbl("Gym")}, std::nullopt);
  EXPECT_EQ(b.size(), 2u);  // one per label
  auto c = bank.bind_triggers({lbl("Library"), lbl("Gym")}, AuxInput{"click", {}});
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[2].template_id, "reserve");
  EXPECT_EQ(c[2].labels.size(), 2u);
  EXPECT_EQ(bank.bind_label_triggers({lbl("Gym")}).size(), 1u);
}

TEST(Bank, RejectsBadRegistrations) {
  TransactionsBank bank;
  bank.register_class("A", {"x"});
  EXPECT_THROW(bank.register_class("B", {"x"}), std::invalid_argument);
  bank.register_template(noop("t", {"A", std::nullopt}));
  EXPECT_THROW(bank.register_template(noop("t", {"A", std::nullopt})), std::invalid_argument);
  EXPECT_THROW(bank.register_template(noop("u", {})), std::invalid_argument);
  EXPECT_THROW(bank.get("missing"), std::out_of_range);
}

TEST(Instance, Transitions) {
  TransactionInstance i;
  i.transition(InstanceState::InitialCommitted);
  EXPECT_THROW(i.transition(InstanceState::Aborted), ProtocolViolation);
  i.transition(InstanceState::FinalCommitted);
  EXPECT_THROW(i.transition(InstanceState::FinalCommitted), ProtocolViolation);
}

TEST(History, EnforcesSectionOrder) {
  History h;
  EXPECT_THROW(h.record({0, 1, SectionKind::Final, EventKind::Begin}), ProtocolViolation);
  EXPECT_EQ(h.record({0, 1, SectionKind::Initial, EventKind::Begin}), 1u);
  EXPECT_THROW(h.record({0, 1, SectionKind::Final, EventKind::Begin}), ProtocolViolation);
  h.record({0, 1, SectionKind::Initial, EventKind::Commit});
  // no abort after initial commit
  EXPECT_THROW(h.record({0, 1, SectionKind::Initial, EventKind::Abort}), ProtocolViolation);
  h.record({0, 1, SectionKind::Final, EventKind::Begin});
  EXPECT_EQ(h.record({0, 1, SectionKind::Final, EventKind::Commit}), 4u);
  EXPECT_THROW(h.record({0, 1, SectionKind::Final, EventKind::Commit}), ProtocolViolation);
}

TEST(ReadDependents, TransitiveChain) {
  using S = SectionKind;
  std::vector<SectionEvent> h = {
      commit(1, S::Initial, {}, {{"a", 1}}),
      commit(2, S::Initial, {{"a", 1}}, {{"b", 1}}),
      commit(3, S::Initial, {{"b", 1}}, {}),
      commit(4, S::Initial, {{"a", 0}}, {}),  // read the seed, not 1's write
      commit(5, S::Final, {{"c", 0}}, {}),
  };
  EXPECT_EQ(read_dependents(h, 1), (std::vector<InstanceId>{2, 3}));
  EXPECT_TRUE(read_dependents(h, 3).empty());
  EXPECT_THROW(read_dependents(h, 99), std::invalid_argument);
}

TEST(ReadDependents, MatchesFixpointOracle) {
  // Random well-formed histories: each commit reads current versions of some
  // keys and installs new versions of others.
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    std::mt19937_64 rng(seed);
    std::map<Key, std::uint64_t> version;
    std::vector<SectionEvent> h;
    const int n = 2 + static_cast<int>(rng() % 10);
    const std::vector<Key> keys{"a", "b", "c", "d"};
    for (int i = 1; i <= n; ++i) {
      std::vector<Access> r, w;
      for (const auto& k : keys) {
        const auto roll = rng() % 4;
        if (roll == 0) r.push_back({k, version[k]});
        if (roll == 1) w.push_back({k, ++version[k]});
      }
      h.push_back(commit(static_cast<InstanceId>(i), SectionKind::Initial, r, w));
    }
    for (InstanceId t = 1; t <= static_cast<InstanceId>(n); ++t) {
      // oracle: grow the tainted set until nothing changes
      std::set<InstanceId> tainted{t};
      for (bool grew = true; grew;) {
        grew = false;
        for (const auto& reader : h) {
          if (tainted.contains(reader.instance)) continue;
          for (const auto& writer : h) {
            if (!tainted.contains(writer.instance)) continue;
            const bool reads_it = std::any_of(reader.reads.begin(), reader.reads.end(), [&](const Access& ra) {
              return std::find(writer.writes.begin(), writer.writes.end(), ra) != writer.writes.end();
            });
            if (reads_it) {
              tainted.insert(reader.instance);
              grew = true;
              break;
            }
          }
        }
      }
      tainted.erase(t);
      const auto got = read_dependents(h, t);
      EXPECT_EQ(std::set<InstanceId>(got.begin(), got.end()), tainted) << "seed " << seed << " txn " << t;
      EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));  // history order = id order here
    }
  }
}
