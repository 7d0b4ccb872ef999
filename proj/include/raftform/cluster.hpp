#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "raftform/events.hpp"
#include "raftform/formation.hpp"
#include "raftform/raft.hpp"
#include "raftform/rng.hpp"
#include "raftform/vec2.hpp"

namespace raftform {

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// How leadership is decided. ScriptedRotation bypasses Raft elections and
/// rotates leadership on a fixed period; RaftElection uses the protocol.
struct LeadershipPolicy {
    enum Kind { ScriptedRotation, RaftElection };
    Kind kind = RaftElection;
    int period = 20;                              // rotation period, frames
    std::optional<std::int64_t> failure_frame;    // scripted leader failure
};

/// What a node failure means for its agent.
enum class FailurePolicy {
    LeaderRoleOnly,    // node stops leading; its agent is still steered
    FreezeAgent,       // agent frozen; goal polygon keeps its original size
    ShrinkFormation,   // agent frozen; goals recomputed on the smaller polygon
};

/// Rotation leader for a frame: index = floor(frame / period) mod n, with
/// unavailable indices skipped by incrementing mod n. After failure_frame the
/// leader that held the slot at the failure is excluded as well.
inline NodeId scripted_rotation_leader(std::int64_t frame, int n, const LeadershipPolicy& policy,
                                       const std::set<NodeId>& unavailable = {}) {
    std::set<NodeId> excluded = unavailable;
    if (policy.failure_frame && frame >= *policy.failure_frame) {
        excluded.insert(static_cast<NodeId>((*policy.failure_frame / policy.period) % n));
    }
    NodeId idx = static_cast<NodeId>((frame / policy.period) % n);
    for (int guard = 0; guard < n && excluded.count(idx); ++guard) idx = (idx + 1) % n;
    return idx;
}

// ---------------------------------------------------------------------------
// Replicated agent registry
// ---------------------------------------------------------------------------

struct AgentState {
    Vec2 position;
    bool alive = true;
    bool operator==(const AgentState&) const = default;
};

/// Deterministic function of the applied log prefix: two registries with the
/// same applied_index are identical field for field.
struct AgentRegistry {
    std::map<NodeId, AgentState> agents;
    LogIndex applied_index = 0;
    bool operator==(const AgentRegistry&) const = default;

    std::vector<NodeId> alive_ids() const {
        std::vector<NodeId> ids;
        for (const auto& [id, st] : agents)
            if (st.alive) ids.push_back(id);
        return ids;
    }
};

/// Spawn position for agents joining at runtime, drawn from the run seed so
/// every replica computes the same value.
inline Vec2 spawn_position(std::uint64_t run_seed, NodeId id) {
    SplitMix64 rng(mix64(run_seed, 0xadd0 + static_cast<std::uint64_t>(id)));
    return {rng.next_in(-2.0, 2.0), rng.next_in(-2.0, 2.0)};
}

// ---------------------------------------------------------------------------
// Goal assignment and the leader's control step
// ---------------------------------------------------------------------------

struct GoalAssignment {
    std::vector<NodeId> steered;          // sorted agent ids the leader moves
    std::vector<Vec2> goals;              // goal per steered agent, same order
    int sides = 0;                        // polygon size in use
};

/// Polygon template without the side count, which the policy determines.
struct FormationTemplate {
    double radius = 1.0;
    Vec2 center{0.0, 0.0};
    double phase = 0.0;

    FormationSpec with_sides(int sides) const { return {sides, radius, center, phase}; }
};

/// Chooses polygon size and vertex assignment per failure policy. frozen
/// holds agents whose nodes have failed; initial_ids is the founding agent
/// set (vertex ranks under FreezeAgent stay pinned to it).
inline GoalAssignment assign_goals(const AgentRegistry& registry, FailurePolicy policy,
                                   const FormationTemplate& formation,
                                   const std::set<NodeId>& frozen,
                                   const std::vector<NodeId>& initial_ids) {
    GoalAssignment out;
    std::vector<NodeId> alive = registry.alive_ids();
    std::vector<NodeId> steered;
    for (NodeId id : alive)
        if (policy == FailurePolicy::LeaderRoleOnly || !frozen.count(id)) steered.push_back(id);
    out.steered = steered;
    if (steered.empty()) return out;

    switch (policy) {
        case FailurePolicy::LeaderRoleOnly: {
            out.sides = static_cast<int>(alive.size());
            auto verts = polygon_goals(formation.with_sides(out.sides));
            for (NodeId id : steered) {
                auto rank = std::lower_bound(alive.begin(), alive.end(), id) - alive.begin();
                out.goals.push_back(verts[static_cast<std::size_t>(rank)]);
            }
            break;
        }
        case FailurePolicy::FreezeAgent: {
            // Original polygon, original ranks: survivors head for the same
            // vertices they were assigned before the failure.
            out.sides = static_cast<int>(initial_ids.size());
            auto verts = polygon_goals(formation.with_sides(out.sides));
            for (NodeId id : steered) {
                auto rank = std::lower_bound(initial_ids.begin(), initial_ids.end(), id) -
                            initial_ids.begin();
                out.goals.push_back(verts[static_cast<std::size_t>(rank)]);
            }
            break;
        }
        case FailurePolicy::ShrinkFormation: {
            out.sides = static_cast<int>(steered.size());
            auto verts = polygon_goals(formation.with_sides(out.sides));
            for (std::size_t r = 0; r < steered.size(); ++r) out.goals.push_back(verts[r]);
            break;
        }
    }
    return out;
}

/// One control step over the registry snapshot: formation errors, Laplacian
/// control law, explicit Euler, then a rigid translation aligning the steered
/// agents' centroid with their goals' centroid. The translation pins the
/// motion the relative-error law leaves free, so agents reach the absolute
/// polygon vertices rather than a translate of them.
inline std::optional<PositionBatch> compute_position_batch(const AgentRegistry& registry,
                                                           FailurePolicy policy,
                                                           const FormationTemplate& formation,
                                                           const ControllerConfig& controller,
                                                           const std::set<NodeId>& frozen,
                                                           const std::vector<NodeId>& initial_ids) {
    GoalAssignment assignment = assign_goals(registry, policy, formation, frozen, initial_ids);
    if (assignment.steered.empty()) return std::nullopt;
    const int m = static_cast<int>(assignment.steered.size());

    std::vector<Vec2> positions;
    positions.reserve(assignment.steered.size());
    for (NodeId id : assignment.steered) positions.push_back(registry.agents.at(id).position);

    std::vector<Vec2> next;
    if (m == 1) {
        next = {positions[0]};
    } else {
        FormationGraph graph = FormationGraph::complete(m);
        if (!controller.stable_for(graph)) return std::nullopt;
        auto inputs = control_inputs(positions, assignment.goals, graph, controller);
        next = euler_step(positions, inputs, controller.dt);
    }
    Vec2 goal_mean, pos_mean;
    for (int i = 0; i < m; ++i) {
        goal_mean += assignment.goals[static_cast<std::size_t>(i)];
        pos_mean += next[static_cast<std::size_t>(i)];
    }
    Vec2 shift = (goal_mean - pos_mean) / static_cast<double>(m);
    PositionBatch batch;
    for (int i = 0; i < m; ++i)
        batch.updates.emplace_back(assignment.steered[static_cast<std::size_t>(i)],
                                   next[static_cast<std::size_t>(i)] + shift);
    return batch;
}

// ---------------------------------------------------------------------------
// Cluster node
// ---------------------------------------------------------------------------

struct NodeFrameResult {
    std::vector<Outbound> outbound;
    std::vector<EventRecord> events;
};

/// One node of the cluster: a Raft replica, the replicated agent registry,
/// and (when leading) the formation controller.
class ClusterNode {
public:
    ClusterNode(NodeId id, std::set<NodeId> initial_members, TimerConfig timers,
                std::uint64_t run_seed, AgentRegistry initial_registry,
                ControllerConfig controller, FormationTemplate formation,
                LeadershipPolicy leadership, FailurePolicy failure_policy)
        : id_(id),
          initial_members_(std::move(initial_members)),
          // All replicas share the run seed: the timer stagger then guarantees
          // distinct election timeouts per term across nodes.
          replica_(id, initial_members_, timers, run_seed),
          timers_(timers),
          run_seed_(run_seed),
          initial_registry_(std::move(initial_registry)),
          registry_(initial_registry_),
          controller_(controller),
          formation_(formation),
          leadership_(leadership),
          failure_policy_(failure_policy) {
        for (const auto& [aid, st] : initial_registry_.agents) initial_ids_.push_back(aid);
    }

    NodeId id() const { return id_; }
    RaftReplica& replica() { return replica_; }
    const RaftReplica& replica() const { return replica_; }
    const AgentRegistry& registry() const { return registry_; }
    const std::vector<LogEntry>& drained_history() const { return drained_history_; }

    PersistentRecord persist() const { return replica_.persist(); }

    /// Crash recovery: durable Raft state survives, everything else is
    /// rebuilt from scratch. The registry is re-derived by replaying the log
    /// as entries recommit.
    void recover(const PersistentRecord& record, std::int64_t frame) {
        replica_ = RaftReplica::restore(record, id_, initial_members_, timers_, run_seed_, frame);
        registry_ = initial_registry_;
        last_contact_.clear();
        silenced_.clear();
        last_control_index_ = 0;
        // The state machine restarts from scratch and re-applies the log as
        // it recommits, so its applied sequence restarts as well.
        drained_history_.clear();
    }

    /// Per-frame work, called after transport delivery. scripted_leader is
    /// set in rotation mode; frozen names agents whose nodes have failed.
    NodeFrameResult node_frame(const std::vector<std::pair<NodeId, RaftMessage>>& inbound,
                               std::int64_t frame, std::optional<NodeId> scripted_leader,
                               const std::set<NodeId>& frozen) {
        NodeFrameResult result;
        for (const auto& [from, msg] : inbound) {
            last_contact_[from] = frame;
            silenced_.erase(from);
            append_all(result.outbound, replica_.handle_message(from, msg, frame));
        }
        if (leadership_.kind == LeadershipPolicy::RaftElection) {
            append_all(result.outbound, replica_.tick(frame));
            for (const RoleChange& rc : replica_.take_transitions()) {
                if (rc.role == Role::Candidate) {
                    // Standing for election while a leader is known means that
                    // leader has gone silent past the timeout: a detected failure.
                    auto hint = replica_.leader_hint();
                    if (hint && *hint != id_ && !silenced_.count(*hint)) {
                        silenced_.insert(*hint);
                        result.events.push_back({"failure", node_label(*hint), rc.term, frame});
                    }
                    result.events.push_back({"candidate", node_label(id_), rc.term, frame});
                } else if (rc.role == Role::Leader)
                    result.events.push_back({"leader", node_label(id_), rc.term, frame});
            }
            detect_failures(frame, result.events);
        }
        apply_committed(replica_.drain_committed());

        bool leading = leadership_.kind == LeadershipPolicy::ScriptedRotation
                           ? (scripted_leader && *scripted_leader == id_)
                           : replica_.role() == Role::Leader;
        if (leading) run_control(frame, frozen, result.outbound);
        apply_committed(replica_.drain_committed());
        return result;
    }

private:
    static void append_all(std::vector<Outbound>& dst, std::vector<Outbound> src) {
        for (auto& m : src) dst.push_back(std::move(m));
    }

    /// Heartbeat-silence failure detection: a leader watches its followers'
    /// replies, a follower (or candidate) watches the last known leader. One
    /// event per detecting node per silence period.
    void detect_failures(std::int64_t frame, std::vector<EventRecord>& events) {
        const int threshold = timers_.election_timeout_max;
        auto check = [&](NodeId peer) {
            auto it = last_contact_.find(peer);
            if (it == last_contact_.end()) return;
            if (frame - it->second >= threshold && !silenced_.count(peer)) {
                silenced_.insert(peer);
                events.push_back({"failure", node_label(peer), replica_.current_term(), frame});
            }
        };
        if (replica_.role() == Role::Leader) {
            for (NodeId peer : replica_.members())
                if (peer != id_) check(peer);
        } else if (replica_.leader_hint() && *replica_.leader_hint() != id_) {
            check(*replica_.leader_hint());
        }
    }

    void run_control(std::int64_t frame, const std::set<NodeId>& frozen,
                     std::vector<Outbound>& outbound) {
        if (leadership_.kind == LeadershipPolicy::RaftElection) {
            // One outstanding control batch at a time; skip while replication lags.
            if (replica_.commit_index() < last_control_index_) return;
        }
        auto batch = compute_position_batch(registry_, failure_policy_, formation_, controller_,
                                            frozen, initial_ids_);
        if (!batch) return;
        if (leadership_.kind == LeadershipPolicy::ScriptedRotation) {
            auto [index, msgs] = replica_.append_and_commit_local(Command{*batch});
            append_all(outbound, std::move(msgs));
        } else {
            auto result = replica_.propose(Command{*batch});
            if (result.ok) last_control_index_ = result.index;
        }
        (void)frame;
    }

    void apply_committed(const std::vector<LogEntry>& entries) {
        for (const LogEntry& e : entries) {
            drained_history_.push_back(e);
            if (const auto* batch = std::get_if<PositionBatch>(&e.command)) {
                for (const auto& [aid, pos] : batch->updates) registry_.agents[aid].position = pos;
            } else if (const auto* add = std::get_if<AddMember>(&e.command)) {
                if (!registry_.agents.count(add->node))
                    registry_.agents[add->node] = {spawn_position(run_seed_, add->node), true};
            } else if (const auto* rem = std::get_if<RemoveMember>(&e.command)) {
                auto it = registry_.agents.find(rem->node);
                if (it != registry_.agents.end()) it->second.alive = false;
            }
            registry_.applied_index = e.index;
        }
    }

    NodeId id_;
    std::set<NodeId> initial_members_;
    RaftReplica replica_;
    TimerConfig timers_;
    std::uint64_t run_seed_;
    AgentRegistry initial_registry_;
    AgentRegistry registry_;
    ControllerConfig controller_;
    FormationTemplate formation_;
    LeadershipPolicy leadership_;
    FailurePolicy failure_policy_;
    std::vector<NodeId> initial_ids_;
    std::map<NodeId, std::int64_t> last_contact_;
    std::set<NodeId> silenced_;
    LogIndex last_control_index_ = 0;
    std::vector<LogEntry> drained_history_;
};

}  // namespace raftform
