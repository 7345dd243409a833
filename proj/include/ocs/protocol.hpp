#pragma once

// Message-level simulation of one sampling round. Three flows:
//
//   OCS    clients report norms to the master individually, the master
//          solves for p and assigns each client its probability.
//   AOCS   every client->master value goes through a sum-only aggregator;
//          the master only ever handles sums and broadcasts scalars.
//   fixed  p is known in advance (full participation, uniform sampling);
//          only update submissions travel, through the aggregator.
//
// Every message is appended to the round transcript, which also carries the
// resulting probabilities, the selection and the bit count.

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ocs/error.hpp"
#include "ocs/random.hpp"
#include "ocs/sampling.hpp"

namespace ocs {

using Vector = Eigen::VectorXd;

// Client -> master (or aggregator).
struct NormReport {
  double norm = 0.0;
};
struct StatusReport {
  double unsaturated = 0.0;
  double probability = 0.0;
};
struct UpdateSubmission {
  Vector scaled_update;  // w_i / p_i * U_i
};

// Aggregator -> master. Sums over all contributing clients.
struct NormAggregate {
  double norm_sum = 0.0;
};
struct StatusAggregate {
  double unsaturated = 0.0;
  double prob_sum = 0.0;
};
struct UpdateAggregate {
  Vector sum;
};

// Master -> clients.
struct NormSumBroadcast {
  double norm_sum = 0.0;
};
struct CalibrationBroadcast {
  double factor = 1.0;
};
struct ProbabilityAssignment {
  std::size_t client = 0;
  double probability = 0.0;
};

using Message = std::variant<NormReport, StatusReport, UpdateSubmission, NormAggregate, StatusAggregate,
                             UpdateAggregate, NormSumBroadcast, CalibrationBroadcast, ProbabilityAssignment>;

// Messages that carry a single client's value.
inline bool is_individual(const Message& m) {
  return std::holds_alternative<NormReport>(m) || std::holds_alternative<StatusReport>(m) ||
         std::holds_alternative<UpdateSubmission>(m);
}

struct Endpoint {
  enum class Kind { master, aggregator, client };
  Kind kind = Kind::master;
  std::size_t client = 0;

  static Endpoint master() { return {Kind::master, 0}; }
  static Endpoint aggregator() { return {Kind::aggregator, 0}; }
  static Endpoint of_client(std::size_t i) { return {Kind::client, i}; }

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

struct LogEntry {
  std::uint64_t round = 0;
  Endpoint sender;
  Message message;
};

enum class RoundMode { full, uniform, ocs, aocs };

inline const char* to_string(RoundMode mode) {
  switch (mode) {
    case RoundMode::full: return "full";
    case RoundMode::uniform: return "uniform";
    case RoundMode::ocs: return "ocs";
    case RoundMode::aocs: return "aocs";
  }
  return "?";
}

struct LedgerOptions {
  unsigned float_width = 32;
  // Broadcasts are free by default: one-to-many links are not the bottleneck.
  bool count_downlink = false;
};

struct RoundBits {
  std::uint64_t update_bits = 0;
  std::uint64_t overhead_bits = 0;
  std::uint64_t downlink_bits = 0;

  std::uint64_t uplink() const noexcept { return update_bits + overhead_bits; }
  friend bool operator==(const RoundBits&, const RoundBits&) = default;
};

/// Running communication totals.
class BitLedger {
 public:
  explicit BitLedger(unsigned float_width = 32) : float_width_(float_width) {}

  void add(const RoundBits& round) {
    rounds_.push_back(round);
    uplink_bits_ += round.uplink();
    downlink_bits_ += round.downlink_bits;
  }

  unsigned float_width() const noexcept { return float_width_; }
  std::uint64_t uplink_bits() const noexcept { return uplink_bits_; }
  std::uint64_t downlink_bits() const noexcept { return downlink_bits_; }
  const std::vector<RoundBits>& rounds() const noexcept { return rounds_; }

 private:
  unsigned float_width_;
  std::uint64_t uplink_bits_ = 0;
  std::uint64_t downlink_bits_ = 0;
  std::vector<RoundBits> rounds_;
};

/// Everything the master was handed during a round, classified.
struct MasterView {
  std::size_t individual_messages = 0;
  std::size_t aggregate_messages = 0;

  void record(const Message& m) { (is_individual(m) ? individual_messages : aggregate_messages) += 1; }
};

struct RoundTranscript {
  std::uint64_t round = 0;
  RoundMode mode = RoundMode::full;
  std::size_t clients = 0;
  std::vector<LogEntry> log;
  ProbabilityVector probabilities;
  ClientSelection selection;
  std::size_t iterations_used = 0;
  bool degenerate = false;
  // What the master ends up with: sum over selected i of U~_i / p_i.
  Vector aggregate_update;
  MasterView master_view;
  RoundBits bits;
};

namespace detail {

inline std::uint64_t floats_in(const Message& m) {
  return std::visit(
      [](const auto& msg) -> std::uint64_t {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, StatusReport> || std::is_same_v<T, StatusAggregate>) return 2;
        else if constexpr (std::is_same_v<T, UpdateSubmission>) return static_cast<std::uint64_t>(msg.scaled_update.size());
        else if constexpr (std::is_same_v<T, UpdateAggregate>) return static_cast<std::uint64_t>(msg.sum.size());
        else return 1;
      },
      m);
}

}  // namespace detail

/// Uplink bits are client uploads: norms and statuses count as overhead,
/// submissions as update payload. Aggregator->master traffic is the secure
/// sum of uploads already counted. Broadcasts reach every client.
inline RoundBits account_bits(const RoundTranscript& transcript, const LedgerOptions& options = {}) {
  RoundBits bits;
  const std::uint64_t width = options.float_width;
  for (const auto& entry : transcript.log) {
    const auto& m = entry.message;
    const std::uint64_t floats = detail::floats_in(m);
    if (std::holds_alternative<UpdateSubmission>(m)) {
      bits.update_bits += floats * width;
    } else if (std::holds_alternative<NormReport>(m) || std::holds_alternative<StatusReport>(m)) {
      bits.overhead_bits += floats * width;
    } else if (options.count_downlink) {
      if (std::holds_alternative<NormSumBroadcast>(m) || std::holds_alternative<CalibrationBroadcast>(m)) {
        bits.downlink_bits += floats * width * transcript.clients;
      } else if (std::holds_alternative<ProbabilityAssignment>(m)) {
        bits.downlink_bits += width;
      }
    }
  }
  return bits;
}

/// Sum-only channel. Contributions go in one at a time; only their total
/// ever comes out.
template <class T>
class SecureAggregator {
 public:
  explicit SecureAggregator(T zero) : zero_(zero), sum_(std::move(zero)) {}

  void add(const T& contribution) {
    sum_ += contribution;
    ++count_;
  }

  T release() {
    T out = std::move(sum_);
    sum_ = zero_;
    count_ = 0;
    return out;
  }

  std::size_t contributors() const noexcept { return count_; }

 private:
  T zero_;
  T sum_;
  std::size_t count_ = 0;
};

/// Master side of the approximate scheme. Its handlers accept aggregates
/// only; there is no entry point for a single client's value.
class AocsMaster {
 public:
  AocsMaster(std::size_t clients, std::size_t budget) : clients_(clients), budget_(budget) {}

  NormSumBroadcast on_norm_aggregate(const NormAggregate& agg) { return {agg.norm_sum}; }

  std::optional<CalibrationBroadcast> on_status_aggregate(const StatusAggregate& agg) {
    const auto c = aocs_step::calibration(agg.unsaturated, agg.prob_sum, budget_, clients_);
    if (!c) return std::nullopt;
    return CalibrationBroadcast{*c};
  }

  Vector on_update_aggregate(const UpdateAggregate& agg) { return agg.sum; }

 private:
  std::size_t clients_;
  std::size_t budget_;
};

template <class M>
concept AocsMasterEndpoint = requires(M master, const NormAggregate& na, const StatusAggregate& sa,
                                      const UpdateAggregate& ua) {
  { master.on_norm_aggregate(na) } -> std::same_as<NormSumBroadcast>;
  { master.on_status_aggregate(sa) } -> std::same_as<std::optional<CalibrationBroadcast>>;
  { master.on_update_aggregate(ua) } -> std::same_as<Vector>;
};

namespace detail {

struct RoundInputs {
  const WeightedNormVector& norms;
  std::span<const Vector> weighted_updates;  // empty: submissions carry no payload
  Eigen::Index dimension = 0;
};

inline RoundInputs make_inputs(const WeightedNormVector& norms, std::span<const Vector> weighted_updates) {
  require(weighted_updates.empty() || weighted_updates.size() == norms.size(),
          "need one update per client (or none)");
  Eigen::Index d = weighted_updates.empty() ? 0 : weighted_updates.front().size();
  for (const auto& u : weighted_updates) require(u.size() == d, "all updates must share one dimension");
  return {norms, weighted_updates, d};
}

inline Vector submission_payload(const RoundInputs& in, std::size_t i, double p) {
  if (in.weighted_updates.empty()) return Vector();
  return in.weighted_updates[i] / p;
}

// Coin flips and submissions, shared by all flows. `to_master` routes each
// submission straight to the master (OCS) instead of through the aggregator.
inline void submit_updates(RoundTranscript& t, const RoundInputs& in, const RoundStreams& streams,
                           bool to_master) {
  SecureAggregator<Vector> aggregator(Vector::Zero(in.dimension));
  Vector master_sum = Vector::Zero(in.dimension);
  const auto& p = t.probabilities;
  for (std::size_t i = 0; i < p.size(); ++i) {
    RandomStream coin = streams.client(i, Purpose::coin);
    if (!coin_flip(p[i], coin)) continue;
    t.selection.included.push_back(i);
    UpdateSubmission sub{submission_payload(in, i, p[i])};
    if (to_master) {
      t.master_view.record(sub);
      master_sum += sub.scaled_update;
    } else {
      aggregator.add(sub.scaled_update);
    }
    t.log.push_back({t.round, Endpoint::of_client(i), std::move(sub)});
  }
  if (to_master) {
    t.aggregate_update = std::move(master_sum);
  } else {
    UpdateAggregate agg{aggregator.release()};
    t.master_view.record(agg);
    t.aggregate_update = agg.sum;
    t.log.push_back({t.round, Endpoint::aggregator(), std::move(agg)});
  }
}

inline RoundTranscript start_transcript(RoundMode mode, const RoundStreams& streams, std::size_t n) {
  RoundTranscript t;
  t.round = streams.round();
  t.mode = mode;
  t.clients = n;
  return t;
}

}  // namespace detail

/// Non-private flow: the master sees every norm and solves for p directly.
inline RoundTranscript run_ocs_round(const WeightedNormVector& norms, std::size_t m, const RoundStreams& streams,
                                     std::span<const Vector> weighted_updates = {},
                                     const LedgerOptions& ledger = {}) {
  const auto in = detail::make_inputs(norms, weighted_updates);
  const std::size_t n = norms.size();
  auto t = detail::start_transcript(RoundMode::ocs, streams, n);

  for (std::size_t i = 0; i < n; ++i) {
    NormReport report{norms[i]};
    t.master_view.record(report);
    t.log.push_back({t.round, Endpoint::of_client(i), report});
  }
  auto solved = ocs_probabilities(norms, m);
  t.degenerate = solved.degenerate;
  t.probabilities = std::move(solved.probabilities);
  for (std::size_t i = 0; i < n; ++i) {
    t.log.push_back({t.round, Endpoint::master(), ProbabilityAssignment{i, t.probabilities[i]}});
  }
  detail::submit_updates(t, in, streams, /*to_master=*/true);
  t.bits = account_bits(t, ledger);
  return t;
}

/// Aggregation-only flow. `master` receives sums and nothing else.
template <AocsMasterEndpoint Master>
RoundTranscript run_aocs_round(Master& master, const WeightedNormVector& norms, std::size_t m, std::size_t j_max,
                               const RoundStreams& streams, std::span<const Vector> weighted_updates = {},
                               const LedgerOptions& ledger = {}) {
  detail::require(m >= 1, "budget m must be >= 1");
  detail::require(j_max >= 1, "j_max must be >= 1");
  const auto in = detail::make_inputs(norms, weighted_updates);
  const std::size_t n = norms.size();
  auto t = detail::start_transcript(RoundMode::aocs, streams, n);

  // Clients upload u_i into the secure sum.
  SecureAggregator<double> norm_channel(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    norm_channel.add(norms[i]);
    t.log.push_back({t.round, Endpoint::of_client(i), NormReport{norms[i]}});
  }
  NormAggregate norm_agg{norm_channel.release()};
  t.master_view.record(norm_agg);
  t.log.push_back({t.round, Endpoint::aggregator(), norm_agg});
  const NormSumBroadcast norm_bcast = master.on_norm_aggregate(norm_agg);
  t.log.push_back({t.round, Endpoint::master(), norm_bcast});

  // Client-local state for this round only.
  std::vector<double> p(n, 0.0);
  const bool degenerate = norm_bcast.norm_sum == 0.0;
  const bool saturated = m >= n;
  for (std::size_t i = 0; i < n; ++i) {
    if (saturated) p[i] = 1.0;
    else if (!degenerate) p[i] = aocs_step::initial_probability(norms[i], norm_bcast.norm_sum, m);
  }

  std::size_t iterations = 0;
  if (!degenerate && !saturated) {
    for (std::size_t j = 0; j < j_max; ++j) {
      ++iterations;
      SecureAggregator<Eigen::Vector2d> status_channel(Eigen::Vector2d::Zero());
      for (std::size_t i = 0; i < n; ++i) {
        const auto s = aocs_step::status(p[i]);
        status_channel.add(Eigen::Vector2d(s.unsaturated, s.probability));
        t.log.push_back({t.round, Endpoint::of_client(i), StatusReport{s.unsaturated, s.probability}});
      }
      const Eigen::Vector2d total = status_channel.release();
      StatusAggregate status_agg{total(0), total(1)};
      t.master_view.record(status_agg);
      t.log.push_back({t.round, Endpoint::aggregator(), status_agg});
      const auto calib = master.on_status_aggregate(status_agg);
      if (!calib) break;
      t.log.push_back({t.round, Endpoint::master(), *calib});
      for (double& pi : p) pi = aocs_step::recalibrate(pi, calib->factor);
      if (aocs_step::converged(calib->factor)) break;
    }
  }

  t.iterations_used = iterations;
  t.degenerate = degenerate;
  t.probabilities = ProbabilityVector(std::move(p), m);
  detail::submit_updates(t, in, streams, /*to_master=*/false);
  t.aggregate_update = master.on_update_aggregate(UpdateAggregate{t.aggregate_update});
  t.bits = account_bits(t, ledger);
  return t;
}

inline RoundTranscript run_aocs_round(const WeightedNormVector& norms, std::size_t m, std::size_t j_max,
                                      const RoundStreams& streams, std::span<const Vector> weighted_updates = {},
                                      const LedgerOptions& ledger = {}) {
  AocsMaster master(norms.size(), m);
  return run_aocs_round(master, norms, m, j_max, streams, weighted_updates, ledger);
}

/// Sampling with probabilities fixed ahead of the round (full or uniform):
/// no norms travel, only submissions.
inline RoundTranscript run_fixed_round(RoundMode mode, const ProbabilityVector& p, const RoundStreams& streams,
                                       std::span<const Vector> weighted_updates = {},
                                       const LedgerOptions& ledger = {}) {
  detail::require(mode == RoundMode::full || mode == RoundMode::uniform, "fixed rounds are full or uniform");
  const WeightedNormVector placeholder(std::vector<double>(p.size(), 0.0));
  const auto in = detail::make_inputs(placeholder, weighted_updates);
  auto t = detail::start_transcript(mode, streams, p.size());
  t.probabilities = p;
  detail::submit_updates(t, in, streams, /*to_master=*/false);
  t.bits = account_bits(t, ledger);
  return t;
}

// ---------------------------------------------------------------------------
// Line-delimited log: round <TAB> sender <TAB> variant <TAB> payload, with
// reals printed at 17 significant digits so parsing recovers them exactly.

namespace detail {

template <class T>
struct VariantName;
#define OCS_VARIANT_NAME(T) \
  template <>               \
  struct VariantName<T> {   \
    static constexpr const char* value = #T; \
  };
OCS_VARIANT_NAME(NormReport)
OCS_VARIANT_NAME(StatusReport)
OCS_VARIANT_NAME(UpdateSubmission)
OCS_VARIANT_NAME(NormAggregate)
OCS_VARIANT_NAME(StatusAggregate)
OCS_VARIANT_NAME(UpdateAggregate)
OCS_VARIANT_NAME(NormSumBroadcast)
OCS_VARIANT_NAME(CalibrationBroadcast)
OCS_VARIANT_NAME(ProbabilityAssignment)
#undef OCS_VARIANT_NAME

inline void append_real(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  if (!out.empty() && out.back() != '\t') out += ' ';
  out += buf;
}

inline void append_vector(std::string& out, const Vector& v) {
  out += std::to_string(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) append_real(out, v(i));
}

inline std::string sender_name(const Endpoint& e) {
  switch (e.kind) {
    case Endpoint::Kind::master: return "master";
    case Endpoint::Kind::aggregator: return "aggregator";
    case Endpoint::Kind::client: return "client:" + std::to_string(e.client);
  }
  return "?";
}

inline Endpoint parse_sender(const std::string& s) {
  if (s == "master") return Endpoint::master();
  if (s == "aggregator") return Endpoint::aggregator();
  require(s.rfind("client:", 0) == 0 && s.size() > 7, "bad sender '" + s + "'");
  return Endpoint::of_client(static_cast<std::size_t>(std::stoull(s.substr(7))));
}

inline double read_real(std::istringstream& in) {
  std::string tok;
  require(static_cast<bool>(in >> tok), "truncated payload");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  require(end != nullptr && *end == '\0', "bad real '" + tok + "'");
  return v;
}

inline Vector read_vector(std::istringstream& in) {
  long long n = -1;
  require(static_cast<bool>(in >> n) && n >= 0, "bad vector length");
  Vector v(n);
  for (long long i = 0; i < n; ++i) v(i) = read_real(in);
  return v;
}

template <class T>
Message read_payload(std::istringstream& in) {
  T msg{};
  if constexpr (std::is_same_v<T, NormReport>) msg.norm = read_real(in);
  else if constexpr (std::is_same_v<T, StatusReport>) {
    msg.unsaturated = read_real(in);
    msg.probability = read_real(in);
  } else if constexpr (std::is_same_v<T, UpdateSubmission>) msg.scaled_update = read_vector(in);
  else if constexpr (std::is_same_v<T, NormAggregate>) msg.norm_sum = read_real(in);
  else if constexpr (std::is_same_v<T, StatusAggregate>) {
    msg.unsaturated = read_real(in);
    msg.prob_sum = read_real(in);
  } else if constexpr (std::is_same_v<T, UpdateAggregate>) msg.sum = read_vector(in);
  else if constexpr (std::is_same_v<T, NormSumBroadcast>) msg.norm_sum = read_real(in);
  else if constexpr (std::is_same_v<T, CalibrationBroadcast>) msg.factor = read_real(in);
  else if constexpr (std::is_same_v<T, ProbabilityAssignment>) {
    unsigned long long c = 0;
    require(static_cast<bool>(in >> c), "bad client index");
    msg.client = static_cast<std::size_t>(c);
    msg.probability = read_real(in);
  }
  return msg;
}

template <std::size_t I = 0>
Message parse_payload(const std::string& name, std::istringstream& in) {
  if constexpr (I == std::variant_size_v<Message>) {
    throw ValidationError("unknown message variant '" + name + "'");
  } else {
    using T = std::variant_alternative_t<I, Message>;
    if (name == VariantName<T>::value) return read_payload<T>(in);
    return parse_payload<I + 1>(name, in);
  }
}

}  // namespace detail

inline std::string format_entry(const LogEntry& entry) {
  std::string line = std::to_string(entry.round) + '\t' + detail::sender_name(entry.sender) + '\t';
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        line += detail::VariantName<T>::value;
        line += '\t';
        if constexpr (std::is_same_v<T, NormReport>) detail::append_real(line, msg.norm);
        else if constexpr (std::is_same_v<T, StatusReport>) {
          detail::append_real(line, msg.unsaturated);
          detail::append_real(line, msg.probability);
        } else if constexpr (std::is_same_v<T, UpdateSubmission>) detail::append_vector(line, msg.scaled_update);
        else if constexpr (std::is_same_v<T, NormAggregate>) detail::append_real(line, msg.norm_sum);
        else if constexpr (std::is_same_v<T, StatusAggregate>) {
          detail::append_real(line, msg.unsaturated);
          detail::append_real(line, msg.prob_sum);
        } else if constexpr (std::is_same_v<T, UpdateAggregate>) detail::append_vector(line, msg.sum);
        else if constexpr (std::is_same_v<T, NormSumBroadcast>) detail::append_real(line, msg.norm_sum);
        else if constexpr (std::is_same_v<T, CalibrationBroadcast>) detail::append_real(line, msg.factor);
        else if constexpr (std::is_same_v<T, ProbabilityAssignment>) {
          line += std::to_string(msg.client);
          detail::append_real(line, msg.probability);
        }
      },
      entry.message);
  return line;
}

inline std::string format_log(std::span<const LogEntry> log) {
  std::string out;
  for (const auto& e : log) {
    out += format_entry(e);
    out += '\n';
  }
  return out;
}

inline LogEntry parse_entry(const std::string& line) {
  std::istringstream fields(line);
  std::string round, sender, variant, payload;
  detail::require(std::getline(fields, round, '\t') && std::getline(fields, sender, '\t') &&
                      std::getline(fields, variant, '\t'),
                  "malformed log line '" + line + "'");
  std::getline(fields, payload);
  std::istringstream in(payload);
  LogEntry entry;
  entry.round = std::stoull(round);
  entry.sender = detail::parse_sender(sender);
  entry.message = detail::parse_payload(variant, in);
  std::string extra;
  detail::require(!(in >> extra), "trailing payload in '" + line + "'");
  return entry;
}

inline std::vector<LogEntry> parse_log(std::string_view text) {
  std::vector<LogEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_entry(line));
  }
  return out;
}

}  // namespace ocs
