#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "raftform/events.hpp"
#include "raftform/raft.hpp"
#include "raftform/rng.hpp"

namespace raftform {

struct Envelope {
    NodeId from = 0;
    NodeId to = 0;
    RaftMessage payload;
    std::int64_t send_frame = 0;
    std::int64_t deliver_frame = 0;
    std::uint64_t sequence = 0;
};

struct CrashNode {
    NodeId node = 0;
    std::int64_t frame = 0;
};
struct RecoverNode {
    NodeId node = 0;
    std::int64_t frame = 0;
};
struct Partition {
    std::vector<std::set<NodeId>> groups;
    std::int64_t frame = 0;
};
struct Heal {
    std::int64_t frame = 0;
};
struct DropProbability {
    double p = 0.0;
    std::int64_t frame = 0;
};

using FaultAction = std::variant<CrashNode, RecoverNode, Partition, Heal, DropProbability>;

inline std::int64_t action_frame(const FaultAction& a) {
    return std::visit([](const auto& v) { return v.frame; }, a);
}

/// Timed fault actions, sorted by frame.
struct FaultSchedule {
    std::vector<FaultAction> actions;

    void sort() {
        std::stable_sort(actions.begin(), actions.end(),
                         [](const FaultAction& a, const FaultAction& b) {
                             return action_frame(a) < action_frame(b);
                         });
    }
};

struct NetConfig {
    std::uint64_t seed = 0;
    int base_delay = 1;   // frames, >= 1
    int jitter = 0;       // extra frames, uniform in [0, jitter]
    double drop_probability = 0.0;

    void validate() const {
        if (base_delay < 1) throw std::invalid_argument("NetConfig: base_delay must be >= 1");
        if (jitter < 0) throw std::invalid_argument("NetConfig: jitter must be >= 0");
        if (drop_probability < 0.0 || drop_probability >= 1.0)
            throw std::invalid_argument("NetConfig: drop_probability must be in [0,1)");
    }
};

struct Delivery {
    NodeId to = 0;
    NodeId from = 0;
    RaftMessage payload;
};

/// What happened to each sent envelope, for the conservation check.
enum class SendOutcome { Delivered, DroppedLoss, DroppedCrash, DroppedPartition, Pending };

/// Deterministic frame-stepped transport with crash, recovery, partition,
/// and probabilistic loss. Identical config + send sequence gives an
/// identical delivery transcript.
class SimNet {
public:
    explicit SimNet(NetConfig config) : config_(config), rng_(mix64(config.seed, 0x5e7)) {
        config_.validate();
        drop_probability_ = config_.drop_probability;
    }

    bool crashed(NodeId n) const { return crashed_.count(n) > 0; }

    bool reachable(NodeId a, NodeId b) const {
        if (groups_.empty()) return true;
        auto ga = group_of(a), gb = group_of(b);
        if (ga < 0 || gb < 0) return false;  // unlisted nodes are isolated
        return ga == gb;
    }

    void send(NodeId from, NodeId to, RaftMessage payload, std::int64_t frame) {
        ++sent_count_;
        if (crashed(from)) {
            ++dropped_crash_;
            return;
        }
        if (crashed(to) || !reachable(from, to)) {
            crashed(to) ? ++dropped_crash_ : ++dropped_partition_;
            return;
        }
        if (drop_probability_ > 0.0 && rng_.next_double() < drop_probability_) {
            ++dropped_loss_;
            return;
        }
        int jit = config_.jitter > 0
                      ? static_cast<int>(rng_.next_below(static_cast<std::uint64_t>(config_.jitter) + 1))
                      : 0;
        Envelope env{from, to, std::move(payload), frame, frame + config_.base_delay + jit,
                     next_sequence_++};
        queue_.push_back(std::move(env));
    }

    /// All envelopes due this frame whose destination is alive and reachable,
    /// in a deterministic total order.
    std::vector<Delivery> step_frame(std::int64_t frame) {
        std::vector<Envelope> due;
        std::vector<Envelope> rest;
        rest.reserve(queue_.size());
        for (auto& e : queue_) {
            if (e.deliver_frame == frame)
                due.push_back(std::move(e));
            else
                rest.push_back(std::move(e));
        }
        queue_ = std::move(rest);
        std::sort(due.begin(), due.end(), [](const Envelope& a, const Envelope& b) {
            return std::tie(a.deliver_frame, a.send_frame, a.from, a.to, a.sequence) <
                   std::tie(b.deliver_frame, b.send_frame, b.from, b.to, b.sequence);
        });
        std::vector<Delivery> out;
        for (auto& e : due) {
            if (crashed(e.to)) {
                ++dropped_crash_;
                continue;
            }
            if (!reachable(e.from, e.to)) {
                ++dropped_partition_;
                continue;
            }
            ++delivered_count_;
            out.push_back({e.to, e.from, std::move(e.payload)});
        }
        return out;
    }

    /// Executes all schedule actions due at this frame. term_of supplies the
    /// affected node's current term for the emitted event rows.
    std::vector<EventRecord> apply_faults(const FaultSchedule& schedule, std::int64_t frame,
                                          const std::function<Term(NodeId)>& term_of) {
        std::vector<EventRecord> events;
        for (const auto& action : schedule.actions) {
            if (action_frame(action) != frame) continue;
            if (const auto* c = std::get_if<CrashNode>(&action)) {
                crashed_.insert(c->node);
                // In-flight inbound mail is lost with the node.
                std::erase_if(queue_, [&](const Envelope& e) {
                    if (e.to != c->node) return false;
                    ++dropped_crash_;
                    return true;
                });
                events.push_back({"simulate failure", node_label(c->node), term_of(c->node), frame});
            } else if (const auto* r = std::get_if<RecoverNode>(&action)) {
                crashed_.erase(r->node);
                events.push_back({"simulate recovery", node_label(r->node), term_of(r->node), frame});
            } else if (const auto* p = std::get_if<Partition>(&action)) {
                groups_ = p->groups;
            } else if (std::holds_alternative<Heal>(action)) {
                groups_.clear();
            } else if (const auto* d = std::get_if<DropProbability>(&action)) {
                drop_probability_ = d->p;
            }
        }
        return events;
    }

    // Transcript counters; every send ends up in exactly one bucket.
    std::int64_t sent() const { return sent_count_; }
    std::int64_t delivered() const { return delivered_count_; }
    std::int64_t dropped() const { return dropped_loss_ + dropped_crash_ + dropped_partition_; }
    std::int64_t pending() const { return static_cast<std::int64_t>(queue_.size()); }

private:
    int group_of(NodeId n) const {
        for (std::size_t g = 0; g < groups_.size(); ++g)
            if (groups_[g].count(n)) return static_cast<int>(g);
        return -1;  // ungrouped nodes are isolated while a partition is active
    }

    NetConfig config_;
    SplitMix64 rng_;
    double drop_probability_ = 0.0;
    std::vector<Envelope> queue_;
    std::uint64_t next_sequence_ = 0;
    std::set<NodeId> crashed_;
    std::vector<std::set<NodeId>> groups_;
    std::int64_t sent_count_ = 0;
    std::int64_t delivered_count_ = 0;
    std::int64_t dropped_loss_ = 0;
    std::int64_t dropped_crash_ = 0;
    std::int64_t dropped_partition_ = 0;
};

}  // namespace raftform
