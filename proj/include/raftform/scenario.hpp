#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "raftform/cluster.hpp"
#include "raftform/events.hpp"
#include "raftform/formation.hpp"
#include "raftform/raft.hpp"
#include "raftform/simnet.hpp"

namespace raftform {

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

struct ScenarioSpec {
    char label = 'A';
    int agents = 5;
    std::int64_t frames = 100;
    LeadershipPolicy leadership;
    FailurePolicy failure_policy = FailurePolicy::LeaderRoleOnly;
    FaultSchedule faults;
    std::vector<std::pair<NodeId, std::int64_t>> member_adds;  // (node, frame)
    FormationTemplate formation;
    ControllerConfig controller;
    TimerConfig timers;
    NetConfig net;
    std::uint64_t seed = 0;
    bool check_safety = true;
    int view_sample_interval = 5;
};

/// Optional user overrides, e.g. from the CLI or a config file.
struct ScenarioOverrides {
    std::optional<int> agents;
    std::optional<std::int64_t> frames;
    std::optional<double> gain;
    std::optional<double> dt;
    std::optional<double> radius;
    std::optional<std::uint64_t> seed;
    std::optional<int> heartbeat;
    std::optional<int> election_min;
    std::optional<int> election_max;
    FaultSchedule faults;                                      // replaces defaults if non-empty
    std::vector<std::pair<NodeId, std::int64_t>> member_adds;  // replaces defaults if non-empty
};

/// Key-value override file: `key value` lines (n, frames, k, dt, radius,
/// seed, heartbeat, election_min, election_max) plus fault schedule lines
/// `crash <node> <frame>`, `recover <node> <frame>`, `add <node> <frame>`.
inline ScenarioOverrides parse_overrides(const std::string& text) {
    ScenarioOverrides o;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::replace(line.begin(), line.end(), '=', ' ');
        std::istringstream l(line);
        std::string key;
        if (!(l >> key)) continue;
        auto fail = [&] {
            throw std::invalid_argument("override file line " + std::to_string(lineno) +
                                        ": bad value for '" + key + "'");
        };
        if (key == "crash" || key == "recover" || key == "add") {
            NodeId node;
            std::int64_t frame;
            if (!(l >> node >> frame)) fail();
            if (key == "crash")
                o.faults.actions.push_back(CrashNode{node, frame});
            else if (key == "recover")
                o.faults.actions.push_back(RecoverNode{node, frame});
            else
                o.member_adds.emplace_back(node, frame);
            continue;
        }
        double num;
        if (!(l >> num)) fail();
        if (key == "n" || key == "agents")
            o.agents = static_cast<int>(num);
        else if (key == "frames")
            o.frames = static_cast<std::int64_t>(num);
        else if (key == "k" || key == "gain")
            o.gain = num;
        else if (key == "dt")
            o.dt = num;
        else if (key == "radius")
            o.radius = num;
        else if (key == "seed")
            o.seed = static_cast<std::uint64_t>(num);
        else if (key == "heartbeat")
            o.heartbeat = static_cast<int>(num);
        else if (key == "election_min")
            o.election_min = static_cast<int>(num);
        else if (key == "election_max")
            o.election_max = static_cast<int>(num);
        else
            throw std::invalid_argument("override file line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
    }
    o.faults.sort();
    return o;
}

/// Default seed for scenario F, chosen so node 1 wins the first election and
/// holds leadership when the scripted crash hits at frame 10.
inline constexpr std::uint64_t kScenarioFSeed = 0;

inline ScenarioSpec build_scenario(char label, const ScenarioOverrides& overrides = {}) {
    ScenarioSpec spec;
    spec.label = label;
    switch (label) {
        case 'A':
            spec.agents = 5;
            spec.frames = 60;
            spec.leadership = {LeadershipPolicy::ScriptedRotation, 20, 35};
            spec.failure_policy = FailurePolicy::LeaderRoleOnly;
            break;
        case 'B':
            spec.agents = 5;
            spec.frames = 200;
            spec.leadership = {LeadershipPolicy::ScriptedRotation, 20, std::nullopt};
            spec.failure_policy = FailurePolicy::FreezeAgent;
            spec.faults.actions = {FaultAction{CrashNode{1, 30}}};
            break;
        case 'C':
            spec.agents = 6;
            spec.frames = 1500;
            spec.leadership = {LeadershipPolicy::ScriptedRotation, 20, std::nullopt};
            spec.failure_policy = FailurePolicy::ShrinkFormation;
            spec.faults.actions = {FaultAction{CrashNode{1, 30}}, FaultAction{CrashNode{2, 30}}};
            break;
        case 'D':
            spec.agents = 5;
            spec.frames = 300;
            spec.leadership.kind = LeadershipPolicy::RaftElection;
            break;
        case 'E':
            spec.agents = 3;
            spec.frames = 100;
            spec.leadership.kind = LeadershipPolicy::RaftElection;
            break;
        case 'F':
            spec.agents = 3;
            spec.frames = 80;
            spec.seed = kScenarioFSeed;
            spec.leadership.kind = LeadershipPolicy::RaftElection;
            spec.faults.actions = {FaultAction{CrashNode{1, 10}}, FaultAction{RecoverNode{1, 20}}};
            break;
        case 'G':
            spec.agents = 4;
            spec.frames = 2000;
            spec.leadership.kind = LeadershipPolicy::RaftElection;
            spec.member_adds = {{4, 50}};
            break;
        default:
            throw std::invalid_argument(std::string("unknown scenario label '") + label + "'");
    }
    if (overrides.agents) spec.agents = *overrides.agents;
    if (overrides.frames) spec.frames = *overrides.frames;
    if (overrides.gain) spec.controller.gain = *overrides.gain;
    if (overrides.dt) spec.controller.dt = *overrides.dt;
    if (overrides.radius) spec.formation.radius = *overrides.radius;
    if (overrides.seed) spec.seed = *overrides.seed;
    if (overrides.heartbeat) spec.timers.heartbeat_interval = *overrides.heartbeat;
    if (overrides.election_min) spec.timers.election_timeout_min = *overrides.election_min;
    if (overrides.election_max) spec.timers.election_timeout_max = *overrides.election_max;
    if (!overrides.faults.actions.empty()) spec.faults = overrides.faults;
    if (!overrides.member_adds.empty()) spec.member_adds = overrides.member_adds;
    spec.faults.sort();
    spec.net.seed = mix64(spec.seed, 0x7e7);
    return spec;
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

struct AgentError {
    NodeId agent = 0;
    double error = 0.0;
    bool steered = true;  // false once the agent is frozen (or has no goal)
};

struct NodeView {
    std::int64_t frame = 0;
    NodeId node = 0;
    std::vector<std::pair<NodeId, Vec2>> positions;
};

struct ReplicaEndState {
    NodeId node = 0;
    Role role = Role::Follower;
    Term term = 0;
    std::vector<std::pair<LogIndex, Term>> log;
    std::vector<std::string> drained;  // encoded committed entries, in apply order
    std::set<NodeId> members;
    int quorum = 0;
};

struct RunRecord {
    ScenarioSpec spec;
    std::vector<std::vector<std::pair<NodeId, Vec2>>> trajectories;  // per frame, sorted by agent
    std::vector<std::vector<AgentError>> per_agent_error;            // per frame
    std::vector<double> global_error;                                // per frame
    std::vector<EventRecord> events;
    std::vector<std::pair<NodeId, Vec2>> final_positions;
    std::vector<NodeView> per_node_views;
    std::vector<ReplicaEndState> replicas;
    std::vector<std::string> safety_violations;
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace detail {

inline std::string encode_entry(const LogEntry& e) {
    return std::to_string(e.index) + " " + std::to_string(e.term) + " " +
           encode_command(e.command);
}

/// Per-node snapshot used by the in-run safety monitors.
struct SafetySnapshot {
    Role role = Role::Follower;
    Term term = 0;
    std::vector<std::pair<LogIndex, Term>> log;
};

inline std::vector<std::pair<LogIndex, Term>> log_shape(const std::vector<LogEntry>& log) {
    std::vector<std::pair<LogIndex, Term>> out;
    out.reserve(log.size());
    for (const auto& e : log) out.emplace_back(e.index, e.term);
    return out;
}

}  // namespace detail

inline RunRecord run(const ScenarioSpec& spec) {
    RunRecord record;
    record.spec = spec;
    spec.controller.validate();
    spec.timers.validate();
    if (spec.agents < 1) throw std::invalid_argument("run: need at least one agent");
    {
        // Stability guard, checked before frame 0 on the largest graph used.
        FormationGraph guard_graph = FormationGraph::complete(
            std::max(2, spec.agents + static_cast<int>(spec.member_adds.size())));
        if (!spec.controller.stable_for(guard_graph))
            throw std::invalid_argument("run: gain * dt violates the stability guard");
    }

    // Founding agents and their seeded start positions.
    std::vector<NodeId> initial_ids;
    for (int i = 0; i < spec.agents; ++i) initial_ids.push_back(i);
    AgentRegistry initial_registry;
    {
        SplitMix64 init_rng(mix64(spec.seed, 0x1417));
        for (NodeId id : initial_ids) {
            Vec2 p{init_rng.next_in(-2.0, 2.0), init_rng.next_in(-2.0, 2.0)};
            initial_registry.agents[id] = {p, true};
        }
    }
    std::set<NodeId> initial_members(initial_ids.begin(), initial_ids.end());

    // All nodes that will ever exist, members first, joiners dormant.
    std::vector<NodeId> node_ids = initial_ids;
    for (const auto& [id, frame] : spec.member_adds)
        if (!initial_members.count(id)) node_ids.push_back(id);
    std::sort(node_ids.begin(), node_ids.end());

    std::map<NodeId, ClusterNode> nodes;
    std::map<NodeId, PersistentRecord> persisted;
    for (NodeId id : node_ids) {
        nodes.emplace(id, ClusterNode(id, initial_members, spec.timers, spec.seed,
                                      initial_registry, spec.controller, spec.formation,
                                      spec.leadership, spec.failure_policy));
        persisted[id] = nodes.at(id).persist();
    }

    SimNet net(spec.net);
    std::set<NodeId> crashed;
    std::set<NodeId> frozen;  // agents excluded from steering (Freeze/Shrink)
    std::vector<std::pair<NodeId, std::int64_t>> pending_adds = spec.member_adds;
    std::optional<NodeId> prev_scripted_leader;
    std::map<NodeId, detail::SafetySnapshot> prev_snapshot;
    // Log Matching monitor watermark: per node pair, how deep the two logs
    // have already been verified entry-for-entry. Avoids re-encoding the full
    // payloads every frame; truncation lowers the watermark so regrown
    // suffixes get re-verified.
    std::map<std::pair<NodeId, NodeId>, std::size_t> verified_prefix;

    const bool scripted = spec.leadership.kind == LeadershipPolicy::ScriptedRotation;

    for (std::int64_t frame = 0; frame < spec.frames; ++frame) {
        // Fault injection.
        auto fault_events = net.apply_faults(spec.faults, frame, [&](NodeId id) {
            return nodes.at(id).replica().current_term();
        });
        for (auto& e : fault_events) record.events.push_back(std::move(e));
        for (const auto& action : spec.faults.actions) {
            if (action_frame(action) != frame) continue;
            if (const auto* c = std::get_if<CrashNode>(&action)) {
                crashed.insert(c->node);
                if (spec.failure_policy != FailurePolicy::LeaderRoleOnly) frozen.insert(c->node);
            } else if (const auto* r = std::get_if<RecoverNode>(&action)) {
                crashed.erase(r->node);
                nodes.at(r->node).recover(persisted.at(r->node), frame);
                prev_snapshot.erase(r->node);
            }
        }

        // Runtime membership changes go through the current leader.
        if (!pending_adds.empty() && !scripted) {
            for (auto it = pending_adds.begin(); it != pending_adds.end();) {
                if (frame < it->second) {
                    ++it;
                    continue;
                }
                bool done = false;
                for (NodeId id : node_ids) {
                    if (crashed.count(id)) continue;
                    auto& rep = nodes.at(id).replica();
                    if (rep.role() == Role::Leader) {
                        done = rep.change_membership(Command{AddMember{it->first}}).ok;
                        break;
                    }
                }
                it = done ? pending_adds.erase(it) : ++it;
            }
        }

        // Transport delivery.
        std::map<NodeId, std::vector<std::pair<NodeId, RaftMessage>>> inbound;
        for (auto& d : net.step_frame(frame)) inbound[d.to].emplace_back(d.from, std::move(d.payload));

        // Scripted leadership for this frame.
        std::optional<NodeId> scripted_leader;
        if (scripted) {
            scripted_leader =
                scripted_rotation_leader(frame, spec.agents, spec.leadership, crashed);
            if (scripted_leader != prev_scripted_leader) {
                record.events.push_back({"leader", node_label(*scripted_leader),
                                         nodes.at(*scripted_leader).replica().current_term(),
                                         frame});
                prev_scripted_leader = scripted_leader;
            }
        }

        // Per-node frame, ascending id, crashed nodes silent.
        for (NodeId id : node_ids) {
            if (crashed.count(id)) continue;
            auto& node = nodes.at(id);
            auto result = node.node_frame(inbound[id], frame, scripted_leader, frozen);
            for (auto& ob : result.outbound) net.send(id, ob.to, std::move(ob.msg), frame);
            for (auto& e : result.events) record.events.push_back(std::move(e));
            persisted[id] = node.persist();
        }

        // Safety monitors.
        if (spec.check_safety) {
            for (NodeId id : node_ids) {
                if (crashed.count(id)) continue;
                const auto& rep = nodes.at(id).replica();
                detail::SafetySnapshot now{rep.role(), rep.current_term(),
                                           detail::log_shape(rep.log())};
                auto it = prev_snapshot.find(id);
                if (it != prev_snapshot.end() && it->second.role == Role::Leader &&
                    now.role == Role::Leader && it->second.term == now.term) {
                    // Leader Append-Only: previous log must be a prefix.
                    bool ok = it->second.log.size() <= now.log.size();
                    for (std::size_t i = 0; ok && i < it->second.log.size(); ++i)
                        ok = it->second.log[i] == now.log[i];
                    if (!ok)
                        record.safety_violations.push_back(
                            "leader-append-only violated by node " + node_label(id) +
                            " at frame " + std::to_string(frame));
                }
                prev_snapshot[id] = std::move(now);
            }
            // Log Matching, pairwise over live nodes.
            for (std::size_t a = 0; a < node_ids.size(); ++a) {
                for (std::size_t b = a + 1; b < node_ids.size(); ++b) {
                    if (crashed.count(node_ids[a]) || crashed.count(node_ids[b])) continue;
                    const auto& la = nodes.at(node_ids[a]).replica().log();
                    const auto& lb = nodes.at(node_ids[b]).replica().log();
                    const std::size_t overlap = std::min(la.size(), lb.size());
                    auto& watermark = verified_prefix[{node_ids[a], node_ids[b]}];
                    watermark = std::min(watermark, overlap);
                    bool mismatch_seen = false;
                    bool violated = false;
                    std::size_t agreed = 0;  // entries verified equal this frame
                    for (std::size_t i = 0; i < overlap; ++i) {
                        if (la[i].term == lb[i].term) {
                            if (mismatch_seen ||
                                (i >= watermark &&
                                 detail::encode_command(la[i].command) !=
                                     detail::encode_command(lb[i].command))) {
                                record.safety_violations.push_back(
                                    "log-matching violated between nodes " +
                                    node_label(node_ids[a]) + " and " + node_label(node_ids[b]) +
                                    " at frame " + std::to_string(frame));
                                violated = true;
                                break;
                            }
                            if (!mismatch_seen) agreed = i + 1;
                        } else {
                            mismatch_seen = true;
                        }
                    }
                    if (!violated) watermark = agreed;
                }
            }
        }

        // Metrics from the most advanced live registry.
        const AgentRegistry* truth = nullptr;
        for (NodeId id : node_ids) {
            if (crashed.count(id)) continue;
            const auto& reg = nodes.at(id).registry();
            if (!truth || reg.applied_index > truth->applied_index) truth = &reg;
        }
        if (!truth) truth = &nodes.at(node_ids.front()).registry();

        std::vector<std::pair<NodeId, Vec2>> frame_positions;
        for (const auto& [aid, st] : truth->agents)
            if (st.alive) frame_positions.emplace_back(aid, st.position);
        record.trajectories.push_back(frame_positions);

        GoalAssignment assignment =
            assign_goals(*truth, spec.failure_policy, spec.formation, frozen, initial_ids);
        std::vector<AgentError> frame_errors;
        std::set<NodeId> steered_set(assignment.steered.begin(), assignment.steered.end());
        // Steered agents measure against their assigned vertex.
        for (std::size_t i = 0; i < assignment.steered.size(); ++i) {
            NodeId aid = assignment.steered[i];
            double err = (truth->agents.at(aid).position - assignment.goals[i]).norm();
            frame_errors.push_back({aid, err, true});
        }
        // Frozen agents under FreezeAgent keep their original vertex in the plot.
        if (spec.failure_policy == FailurePolicy::FreezeAgent) {
            auto verts = polygon_goals(spec.formation.with_sides(static_cast<int>(initial_ids.size())));
            for (NodeId aid : truth->alive_ids()) {
                if (steered_set.count(aid)) continue;
                auto rank = std::lower_bound(initial_ids.begin(), initial_ids.end(), aid) -
                            initial_ids.begin();
                double err =
                    (truth->agents.at(aid).position - verts[static_cast<std::size_t>(rank)]).norm();
                frame_errors.push_back({aid, err, false});
            }
        }
        std::sort(frame_errors.begin(), frame_errors.end(),
                  [](const AgentError& x, const AgentError& y) { return x.agent < y.agent; });
        record.per_agent_error.push_back(std::move(frame_errors));

        double E = 0.0;
        if (assignment.steered.size() >= 2) {
            std::vector<Vec2> pos;
            for (NodeId aid : assignment.steered) pos.push_back(truth->agents.at(aid).position);
            FormationGraph g = FormationGraph::complete(static_cast<int>(assignment.steered.size()));
            E = global_error(formation_errors(pos, assignment.goals, g));
        }
        record.global_error.push_back(E);

        if (frame % spec.view_sample_interval == 0) {
            for (NodeId id : node_ids) {
                if (crashed.count(id)) continue;
                NodeView view{frame, id, {}};
                for (const auto& [aid, st] : nodes.at(id).registry().agents)
                    if (st.alive) view.positions.emplace_back(aid, st.position);
                record.per_node_views.push_back(std::move(view));
            }
        }
    }

    record.final_positions = record.trajectories.empty()
                                 ? std::vector<std::pair<NodeId, Vec2>>{}
                                 : record.trajectories.back();
    for (NodeId id : node_ids) {
        const auto& node = nodes.at(id);
        const auto& rep = node.replica();
        ReplicaEndState end;
        end.node = id;
        end.role = rep.role();
        end.term = rep.current_term();
        end.log = detail::log_shape(rep.log());
        for (const auto& e : node.drained_history()) end.drained.push_back(detail::encode_entry(e));
        end.members = rep.members();
        end.quorum = rep.quorum_size();
        record.replicas.push_back(std::move(end));
    }

    // State Machine Safety: drained sequences must be prefix-consistent.
    if (spec.check_safety) {
        for (std::size_t a = 0; a < record.replicas.size(); ++a) {
            for (std::size_t b = a + 1; b < record.replicas.size(); ++b) {
                const auto& da = record.replicas[a].drained;
                const auto& db = record.replicas[b].drained;
                for (std::size_t i = 0; i < std::min(da.size(), db.size()); ++i) {
                    if (da[i] != db[i]) {
                        record.safety_violations.push_back(
                            "state-machine-safety violated between nodes " +
                            node_label(record.replicas[a].node) + " and " +
                            node_label(record.replicas[b].node));
                        break;
                    }
                }
            }
        }
    }
    return record;
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct RunSummary {
    double final_global_error = 0.0;
    std::optional<std::int64_t> convergence_frame;  // all steered errors < 1e-3
    std::map<Term, std::set<std::string>> leaders_by_term;
    std::vector<std::int64_t> failure_detection_frames;
    int simulated_failures = 0;
    int simulated_recoveries = 0;
    std::vector<std::string> safety_violations;
};

inline RunSummary summarize(const RunRecord& record) {
    RunSummary s;
    s.final_global_error = record.global_error.empty() ? 0.0 : record.global_error.back();
    for (std::size_t f = 0; f < record.per_agent_error.size(); ++f) {
        bool ok = !record.per_agent_error[f].empty();
        for (const AgentError& e : record.per_agent_error[f])
            if (e.steered && e.error >= 1e-3) ok = false;
        if (ok) {
            s.convergence_frame = static_cast<std::int64_t>(f);
            break;
        }
    }
    for (const EventRecord& e : record.events) {
        if (e.type == "leader") s.leaders_by_term[e.term].insert(e.node);
        if (e.type == "failure") s.failure_detection_frames.push_back(e.frame);
        if (e.type == "simulate failure") ++s.simulated_failures;
        if (e.type == "simulate recovery") ++s.simulated_recoveries;
    }
    s.safety_violations = record.safety_violations;
    if (record.spec.leadership.kind == LeadershipPolicy::RaftElection) {
        for (const auto& [term, who] : s.leaders_by_term) {
            if (term > 0 && who.size() > 1)
                s.safety_violations.push_back("election-safety violated in term " +
                                              std::to_string(term));
        }
    }
    return s;
}

}  // namespace raftform
