#include "ocs/protocol.hpp"

#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace ocs {
namespace {

using Vec = Eigen::VectorXd;

template <class M, class T>
concept AnyHandlerTakes = requires(M m, const T& msg) { m.on_norm_aggregate(msg); } ||
                          requires(M m, const T& msg) { m.on_status_aggregate(msg); } ||
                          requires(M m, const T& msg) { m.on_update_aggregate(msg); };

template <class M>
concept AcceptsIndividual =
    AnyHandlerTakes<M, NormReport> || AnyHandlerTakes<M, StatusReport> || AnyHandlerTakes<M, UpdateSubmission>;

static_assert(AocsMasterEndpoint<AocsMaster>);
static_assert(!AcceptsIndividual<AocsMaster>);

// Forwards to the real master and keeps a tally of everything it is handed.
struct CountingMaster {
  AocsMaster inner;
  std::size_t aggregate_calls = 0;
  std::size_t per_client_reads = 0;

  NormSumBroadcast on_norm_aggregate(const NormAggregate& a) {
    ++aggregate_calls;
    return inner.on_norm_aggregate(a);
  }
  std::optional<CalibrationBroadcast> on_status_aggregate(const StatusAggregate& a) {
    ++aggregate_calls;
    return inner.on_status_aggregate(a);
  }
  Vec on_update_aggregate(const UpdateAggregate& a) {
    ++aggregate_calls;
    return inner.on_update_aggregate(a);
  }
  void on_norm_report(const NormReport&) { ++per_client_reads; }
};
static_assert(AocsMasterEndpoint<CountingMaster>);

template <class T>
std::size_t count_of(const RoundTranscript& t) {
  std::size_t c = 0;
  for (const auto& e : t.log) c += std::holds_alternative<T>(e.message);
  return c;
}

std::vector<Vec> random_updates(std::mt19937_64& rng, std::size_t n, Eigen::Index d) {
  std::normal_distribution<double> g;
  std::vector<Vec> out(n, Vec(d));
  for (auto& v : out)
    for (Eigen::Index c = 0; c < d; ++c) v(c) = g(rng);
  return out;
}

std::vector<double> norms_of(const std::vector<Vec>& updates) {
  std::vector<double> u;
  for (const auto& v : updates) u.push_back(v.norm());
  return u;
}

TEST(OcsRound, WorkedExample) {
  const auto t = run_ocs_round(WeightedNormVector({1, 2, 3, 10}), 2, RoundStreams(1, 0));
  EXPECT_NEAR(t.probabilities[0], 1.0 / 6, 1e-12);
  EXPECT_NEAR(t.probabilities[1], 1.0 / 3, 1e-12);
  EXPECT_NEAR(t.probabilities[2], 0.5, 1e-12);
  EXPECT_EQ(t.probabilities[3], 1.0);
  EXPECT_EQ(t.bits.overhead_bits, 4u * 32);
  EXPECT_TRUE(t.selection.contains(3));
  EXPECT_EQ(count_of<ProbabilityAssignment>(t), 4u);
  EXPECT_EQ(t.master_view.individual_messages, 4u + t.selection.size());
}

TEST(OcsRound, FullBudgetEveryoneSubmits) {
  const auto t = run_ocs_round(WeightedNormVector({1, 2, 3}), 3, RoundStreams(1, 0));
  EXPECT_EQ(t.selection.size(), 3u);
  EXPECT_EQ(t.bits.overhead_bits, 3u * 32);
}

TEST(OcsRound, AllZeroNormsDegenerate) {
  const auto t = run_ocs_round(WeightedNormVector({0, 0, 0, 0}), 2, RoundStreams(1, 0));
  EXPECT_TRUE(t.degenerate);
  EXPECT_TRUE(t.selection.empty());
  EXPECT_EQ(t.bits.overhead_bits, 4u * 32);
  EXPECT_EQ(t.bits.update_bits, 0u);
}

TEST(AocsRound, WorkedExample) {
  const auto t = run_aocs_round(WeightedNormVector({1, 2, 3, 10}), 2, 4, RoundStreams(1, 0));
  EXPECT_NEAR(t.probabilities[0], 1.0 / 6, 1e-12);
  EXPECT_NEAR(t.probabilities[1], 1.0 / 3, 1e-12);
  EXPECT_NEAR(t.probabilities[2], 0.5, 1e-12);
  EXPECT_EQ(t.probabilities[3], 1.0);
  EXPECT_EQ(t.iterations_used, 2u);
  EXPECT_EQ(t.bits.overhead_bits, 20u * 32);
  EXPECT_EQ(t.master_view.individual_messages, 0u);
}

TEST(AocsRound, EqualNormsOneIteration) {
  const auto t = run_aocs_round(WeightedNormVector({5, 5, 5, 5, 5}), 2, 5, RoundStreams(3, 0));
  EXPECT_EQ(t.iterations_used, 1u);
  EXPECT_EQ(t.bits.overhead_bits, 3u * 5 * 32);
}

TEST(AocsRound, ZeroUnsaturatedMassGuard) {
  const auto t = run_aocs_round(WeightedNormVector({0, 0, 0, 4}), 1, 4, RoundStreams(3, 0));
  EXPECT_EQ(t.iterations_used, 1u);
  EXPECT_EQ(count_of<CalibrationBroadcast>(t), 0u);
  EXPECT_EQ(t.selection.included, std::vector<std::size_t>{3});
}

TEST(AocsRound, StatusReportsAreIndicatorPairs) {
  std::mt19937_64 rng(8);
  const WeightedNormVector norms(ocs::testing::log_uniform_norms(rng, 30));
  const auto t = run_aocs_round(norms, 5, 30, RoundStreams(2, 9));
  std::size_t seen = 0;
  for (const auto& e : t.log) {
    if (const auto* s = std::get_if<StatusReport>(&e.message)) {
      ++seen;
      if (s->unsaturated == 1.0) {
        EXPECT_LT(s->probability, 1.0);
      } else {
        EXPECT_EQ(s->unsaturated, 0.0);
        EXPECT_EQ(s->probability, 0.0);
      }
    }
  }
  EXPECT_EQ(seen, 30u * t.iterations_used);
}

TEST(AocsRound, MatchesStandaloneSolverBitForBit) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, n + 2)(rng);
    const std::size_t j = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    const WeightedNormVector norms(ocs::testing::log_uniform_norms(rng, n));
    const auto solo = aocs_probabilities(norms, m, j);
    const auto t = run_aocs_round(norms, m, j, RoundStreams(4, trial));
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(t.probabilities[i], solo.probabilities[i]) << "trial " << trial;
    EXPECT_EQ(t.iterations_used, solo.iterations_used) << "trial " << trial;
  }
}

TEST(AocsRound, CountingMasterSeesNoIndividualValues) {
  std::mt19937_64 rng(4);
  CountingMaster master{AocsMaster(12, 3)};
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto updates = random_updates(rng, 12, 3);
    const WeightedNormVector norms(norms_of(updates));
    const auto t = run_aocs_round(master, norms, 3, 4, RoundStreams(7, k), updates);
    EXPECT_EQ(t.master_view.individual_messages, 0u);
    EXPECT_EQ(t.master_view.aggregate_messages, 2u + t.iterations_used);
  }
  EXPECT_EQ(master.per_client_reads, 0u);
  EXPECT_GT(master.aggregate_calls, 0u);
}

TEST(ProtocolEquivalence, SameSelectionWhenProbabilitiesAgree) {
  std::mt19937_64 rng(12);
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const std::size_t n = 16;
    const auto updates = random_updates(rng, n, 4);
    const WeightedNormVector norms(norms_of(updates));
    const RoundStreams streams(99, trial);
    const auto a = run_ocs_round(norms, 4, streams, updates);
    const auto b = run_aocs_round(norms, 4, n, streams, updates);
    double gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) gap = std::max(gap, std::abs(a.probabilities[i] - b.probabilities[i]));
    ASSERT_LE(gap, 1e-10);
    EXPECT_EQ(a.selection, b.selection);
    EXPECT_LE((a.aggregate_update - b.aggregate_update).norm(), 1e-9 * (1 + a.aggregate_update.norm()));
  }
}

TEST(ProtocolRound, AggregateIsInverseProbabilityWeightedSum) {
  std::mt19937_64 rng(2);
  const auto updates = random_updates(rng, 10, 5);
  const WeightedNormVector norms(norms_of(updates));
  const auto t = run_aocs_round(norms, 3, 10, RoundStreams(5, 1), updates);
  Vec expected = Vec::Zero(5);
  for (auto i : t.selection.included) expected += updates[i] / t.probabilities[i];
  EXPECT_LE((t.aggregate_update - expected).norm(), 1e-12 * (1 + expected.norm()));
}

TEST(ProtocolRound, EmptySelectionGivesZeroAggregate) {
  const std::vector<Vec> updates(3, Vec::Zero(2));
  const auto t = run_aocs_round(WeightedNormVector({0, 0, 0}), 1, 3, RoundStreams(1, 1), updates);
  EXPECT_TRUE(t.selection.empty());
  EXPECT_EQ(t.aggregate_update.size(), 2);
  EXPECT_EQ(t.aggregate_update.squaredNorm(), 0.0);
}

TEST(BitAccounting, AocsCountingConvention) {
  RoundTranscript t;
  t.clients = 4;
  for (std::size_t i = 0; i < 4; ++i) t.log.push_back({0, Endpoint::of_client(i), NormReport{1.0}});
  for (int j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 4; ++i) t.log.push_back({0, Endpoint::of_client(i), StatusReport{1, 0.5}});
  for (std::size_t i = 0; i < 3; ++i) t.log.push_back({0, Endpoint::of_client(i), UpdateSubmission{Vec::Ones(100)}});
  t.log.push_back({0, Endpoint::aggregator(), UpdateAggregate{Vec::Ones(100)}});
  t.log.push_back({0, Endpoint::master(), CalibrationBroadcast{1.0}});
  EXPECT_EQ(account_bits(t).uplink(), 10240u);
}

TEST(BitAccounting, OcsWithoutSubmitters) {
  RoundTranscript t;
  t.clients = 4;
  for (std::size_t i = 0; i < 4; ++i) t.log.push_back({0, Endpoint::of_client(i), NormReport{0.0}});
  EXPECT_EQ(account_bits(t).uplink(), 128u);
}

TEST(BitAccounting, FullParticipationHasNoOverhead) {
  std::mt19937_64 rng(1);
  const auto updates = random_updates(rng, 6, 7);
  const auto t = run_fixed_round(RoundMode::full, full_probabilities(6), RoundStreams(1, 0), updates);
  EXPECT_EQ(t.selection.size(), 6u);
  EXPECT_EQ(t.bits.overhead_bits, 0u);
  EXPECT_EQ(t.bits.update_bits, 6u * 7 * 32);
  EXPECT_EQ(t.master_view.individual_messages, 0u);
}

TEST(BitAccounting, FloatWidthAndDownlinkFlag) {
  const WeightedNormVector norms({1, 2, 3, 10});
  LedgerOptions opt;
  opt.float_width = 64;
  opt.count_downlink = true;
  const auto t = run_aocs_round(norms, 2, 4, RoundStreams(1, 0), {}, opt);
  EXPECT_EQ(t.bits.overhead_bits, 20u * 64);
  // one norm-sum broadcast and two calibrations, each to 4 clients
  EXPECT_EQ(t.bits.downlink_bits, 3u * 4 * 64);
  EXPECT_EQ(run_aocs_round(norms, 2, 4, RoundStreams(1, 0)).bits.downlink_bits, 0u);
}

TEST(BitAccounting, LedgerIsAdditive) {
  std::mt19937_64 rng(6);
  BitLedger ledger;
  std::uint64_t expected = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto updates = random_updates(rng, 8, 3);
    const WeightedNormVector norms(norms_of(updates));
    const auto t = run_aocs_round(norms, 2, 3, RoundStreams(3, k), updates);
    EXPECT_EQ(t.bits.uplink(), (t.selection.size() * 3 + 8 * (1 + 2 * t.iterations_used)) * 32);
    EXPECT_EQ(account_bits(t), t.bits);
    expected += t.bits.uplink();
    ledger.add(t.bits);
  }
  EXPECT_EQ(ledger.uplink_bits(), expected);
  EXPECT_EQ(ledger.rounds().size(), 20u);
}

TEST(Transcript, ReplayIsByteIdentical) {
  std::mt19937_64 rng(31);
  const auto updates = random_updates(rng, 9, 4);
  const WeightedNormVector norms(norms_of(updates));
  const RoundStreams streams(1234, 17);
  const auto first = format_log(run_aocs_round(norms, 3, 5, streams, updates).log);
  const auto second = format_log(run_aocs_round(norms, 3, 5, streams, updates).log);
  EXPECT_EQ(first, second);
  const auto ocs_first = format_log(run_ocs_round(norms, 3, streams, updates).log);
  EXPECT_EQ(ocs_first, format_log(run_ocs_round(norms, 3, streams, updates).log));
  EXPECT_NE(first, format_log(run_aocs_round(norms, 3, 5, RoundStreams(1234, 18), updates).log));
}

TEST(Transcript, ParseRoundTrips) {
  std::mt19937_64 rng(32);
  const auto updates = random_updates(rng, 6, 3);
  const WeightedNormVector norms(norms_of(updates));
  for (const auto& t : {run_aocs_round(norms, 2, 4, RoundStreams(5, 3), updates),
                        run_ocs_round(norms, 2, RoundStreams(5, 3), updates)}) {
    const auto text = format_log(t.log);
    const auto parsed = parse_log(text);
    ASSERT_EQ(parsed.size(), t.log.size());
    EXPECT_EQ(format_log(parsed), text);
    for (std::size_t k = 0; k < parsed.size(); ++k) {
      EXPECT_EQ(parsed[k].sender, t.log[k].sender);
      EXPECT_EQ(parsed[k].message.index(), t.log[k].message.index());
    }
    EXPECT_EQ(account_bits(RoundTranscript{.clients = 6, .log = parsed}), t.bits);
  }
}

TEST(Transcript, LineFormat) {
  const LogEntry e{3, Endpoint::of_client(2), StatusReport{1, 0.25}};
  EXPECT_EQ(format_entry(e), "3\tclient:2\tStatusReport\t1 0.25");
  const LogEntry v{0, Endpoint::aggregator(), UpdateAggregate{Vec::Constant(2, 0.5)}};
  EXPECT_EQ(format_entry(v), "0\taggregator\tUpdateAggregate\t2 0.5 0.5");
}

TEST(Transcript, RejectsMalformedLines) {
  EXPECT_THROW(parse_log("0\tclient:1\tNoSuchThing\t1\n"), ValidationError);
  EXPECT_THROW(parse_log("0\tnobody\tNormReport\t1\n"), ValidationError);
  EXPECT_THROW(parse_log("0\tmaster\tNormSumBroadcast\t1 2\n"), ValidationError);
  EXPECT_THROW(parse_log("0\tmaster\tNormSumBroadcast\tabc\n"), ValidationError);
  EXPECT_THROW(parse_log("0 master NormSumBroadcast 1\n"), ValidationError);
}

TEST(ProtocolRound, RejectsMismatchedUpdates) {
  const std::vector<Vec> two(2, Vec::Ones(3));
  EXPECT_THROW(run_ocs_round(WeightedNormVector({1, 2, 3}), 1, RoundStreams(1, 0), two), ValidationError);
  EXPECT_THROW(run_aocs_round(WeightedNormVector({1, 2}), 1, 0, RoundStreams(1, 0), two), ValidationError);
  EXPECT_THROW(run_ocs_round(WeightedNormVector({1, 2}), 0, RoundStreams(1, 0)), ValidationError);
}

}  // namespace
}  // namespace ocs
