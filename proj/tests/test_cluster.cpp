#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "raftform/cluster.hpp"

using namespace raftform;

namespace {

AgentRegistry registry_of(const std::vector<std::pair<NodeId, Vec2>>& agents) {
    AgentRegistry reg;
    for (const auto& [id, pos] : agents) reg.agents[id] = {pos, true};
    return reg;
}

std::vector<NodeId> ids_of(const AgentRegistry& reg) {
    std::vector<NodeId> out;
    for (const auto& [id, st] : reg.agents) out.push_back(id);
    return out;
}

}  // namespace

TEST_CASE("scripted rotation: leader index follows floor(frame/period) mod n") {
    LeadershipPolicy policy{LeadershipPolicy::ScriptedRotation, 20, std::nullopt};
    CHECK(scripted_rotation_leader(0, 5, policy) == 0);
    CHECK(scripted_rotation_leader(19, 5, policy) == 0);
    CHECK(scripted_rotation_leader(20, 5, policy) == 1);
    CHECK(scripted_rotation_leader(39, 5, policy) == 1);
    CHECK(scripted_rotation_leader(40, 5, policy) == 2);
    CHECK(scripted_rotation_leader(100, 5, policy) == 0);  // wraps
}

TEST_CASE("scripted rotation: failed slot holder is skipped from the failure on") {
    LeadershipPolicy policy{LeadershipPolicy::ScriptedRotation, 20, 35};
    // Frame 35 falls in slot 1 (frames 20..39); node 1 held it.
    CHECK(scripted_rotation_leader(34, 5, policy) == 1);
    CHECK(scripted_rotation_leader(35, 5, policy) == 2);  // skip forward
    CHECK(scripted_rotation_leader(39, 5, policy) == 2);
    CHECK(scripted_rotation_leader(40, 5, policy) == 2);  // its own slot
    CHECK(scripted_rotation_leader(60, 5, policy) == 3);
    CHECK(scripted_rotation_leader(100, 5, policy) == 0);
    CHECK(scripted_rotation_leader(120, 5, policy) == 2);  // slot 1 again, skipped
}

TEST_CASE("scripted rotation: explicit unavailable set and single-node cluster") {
    LeadershipPolicy policy{LeadershipPolicy::ScriptedRotation, 20, std::nullopt};
    CHECK(scripted_rotation_leader(20, 5, policy, {1, 2}) == 3);
    CHECK(scripted_rotation_leader(0, 1, policy) == 0);
}

TEST_CASE("spawn_position: deterministic per seed/id, inside the spawn square") {
    Vec2 a = spawn_position(7, 3);
    CHECK(a == spawn_position(7, 3));
    CHECK(a != spawn_position(7, 4));
    CHECK(a != spawn_position(8, 3));
    CHECK(std::abs(a.x) <= 2.0);
    CHECK(std::abs(a.y) <= 2.0);
}

TEST_CASE("assign_goals: full membership gives every agent its rank vertex") {
    auto reg = registry_of({{0, {1, 0}}, {1, {0, 1}}, {2, {-1, 0}}, {3, {0, -1}}});
    FormationTemplate tmpl;  // radius 1, center origin
    auto g = assign_goals(reg, FailurePolicy::LeaderRoleOnly, tmpl, {}, ids_of(reg));
    CHECK(g.sides == 4);
    CHECK(g.steered == std::vector<NodeId>{0, 1, 2, 3});
    auto verts = polygon_goals(tmpl.with_sides(4));
    REQUIRE(g.goals.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(g.goals[static_cast<std::size_t>(i)] == verts[static_cast<std::size_t>(i)]);
}

TEST_CASE("assign_goals: LeaderRoleOnly keeps a frozen-set'd agent steered") {
    auto reg = registry_of({{0, {0, 0}}, {1, {1, 1}}, {2, {2, 2}}});
    auto g = assign_goals(reg, FailurePolicy::LeaderRoleOnly, FormationTemplate{}, {1}, ids_of(reg));
    CHECK(g.sides == 3);
    CHECK(g.steered == std::vector<NodeId>{0, 1, 2});
}

TEST_CASE("assign_goals: FreezeAgent keeps the original polygon and ranks") {
    auto reg = registry_of({{0, {0, 0}}, {1, {1, 1}}, {2, {2, 2}}, {3, {3, 3}}, {4, {4, 4}}});
    FormationTemplate tmpl;
    auto ids = ids_of(reg);
    auto g = assign_goals(reg, FailurePolicy::FreezeAgent, tmpl, {1}, ids);
    CHECK(g.sides == 5);  // pentagon survives the freeze
    CHECK(g.steered == std::vector<NodeId>{0, 2, 3, 4});
    auto verts = polygon_goals(tmpl.with_sides(5));
    // Agent 2 still heads for vertex 2, not vertex 1.
    CHECK(g.goals[1] == verts[2]);
    CHECK(g.goals[3] == verts[4]);
}

TEST_CASE("assign_goals: ShrinkFormation rebuilds a smaller polygon over survivors") {
    auto reg = registry_of({{0, {0, 0}}, {1, {1, 1}}, {2, {2, 2}}, {3, {3, 3}},
                            {4, {4, 4}}, {5, {5, 5}}});
    FormationTemplate tmpl;
    auto g = assign_goals(reg, FailurePolicy::ShrinkFormation, tmpl, {1, 2}, ids_of(reg));
    CHECK(g.sides == 4);
    CHECK(g.steered == std::vector<NodeId>{0, 3, 4, 5});
    auto verts = polygon_goals(tmpl.with_sides(4));
    for (int i = 0; i < 4; ++i) CHECK(g.goals[static_cast<std::size_t>(i)] == verts[static_cast<std::size_t>(i)]);
}

TEST_CASE("compute_position_batch: matches a by-hand recomputation of the pipeline") {
    auto reg = registry_of({{0, {0.5, -0.25}}, {1, {-1.0, 0.75}}, {2, {0.25, 1.5}}});
    ControllerConfig controller{1.0, 0.05};
    FormationTemplate tmpl;
    auto ids = ids_of(reg);
    auto batch = compute_position_batch(reg, FailurePolicy::LeaderRoleOnly, tmpl, controller, {}, ids);
    REQUIRE(batch);
    REQUIRE(batch->updates.size() == 3);

    // Independent recomputation: errors, inputs, Euler, centroid alignment.
    std::vector<Vec2> x = {{0.5, -0.25}, {-1.0, 0.75}, {0.25, 1.5}};
    auto goals = polygon_goals(tmpl.with_sides(3));
    FormationGraph graph = FormationGraph::complete(3);
    auto inputs = control_inputs(x, goals, graph, controller);
    auto next = euler_step(x, inputs, controller.dt);
    Vec2 gm, pm;
    for (int i = 0; i < 3; ++i) { gm += goals[static_cast<std::size_t>(i)]; pm += next[static_cast<std::size_t>(i)]; }
    Vec2 shift = (gm - pm) / 3.0;
    for (int i = 0; i < 3; ++i) {
        auto s = static_cast<std::size_t>(i);
        CHECK(batch->updates[s].first == i);
        CHECK(batch->updates[s].second == next[s] + shift);  // bit-identical path
    }
}

TEST_CASE("compute_position_batch: repeated application converges to the polygon") {
    auto reg = registry_of({{0, {1.7, -0.3}}, {1, {-0.4, 0.9}}, {2, {0.2, -1.6}}, {3, {1.1, 1.2}}});
    ControllerConfig controller{1.0, 0.05};
    FormationTemplate tmpl;
    auto ids = ids_of(reg);
    for (int step = 0; step < 600; ++step) {
        auto batch = compute_position_batch(reg, FailurePolicy::LeaderRoleOnly, tmpl, controller, {}, ids);
        REQUIRE(batch);
        for (const auto& [id, pos] : batch->updates) reg.agents[id].position = pos;
    }
    auto verts = polygon_goals(tmpl.with_sides(4));
    for (int i = 0; i < 4; ++i)
        CHECK((reg.agents[i].position - verts[static_cast<std::size_t>(i)]).norm() < 1e-6);
}

TEST_CASE("compute_position_batch: single steered agent snaps to its goal") {
    auto reg = registry_of({{0, {1.0, 1.0}}, {1, {0.0, 0.0}}});
    reg.agents[1].alive = false;
    ControllerConfig controller{1.0, 0.05};
    FormationTemplate tmpl;
    auto batch = compute_position_batch(reg, FailurePolicy::ShrinkFormation, tmpl, controller, {}, {0, 1});
    REQUIRE(batch);
    REQUIRE(batch->updates.size() == 1);
    auto goal = polygon_goals(tmpl.with_sides(1))[0];
    CHECK(batch->updates[0].second == goal);
}

TEST_CASE("compute_position_batch: unstable gain refuses to act") {
    auto reg = registry_of({{0, {1, 0}}, {1, {0, 1}}, {2, {-1, 0}}, {3, {0, -1}}, {4, {1, 1}}});
    ControllerConfig controller{5.0, 0.1};  // k*dt*2*maxdeg = 4 >= 2
    auto batch = compute_position_batch(reg, FailurePolicy::LeaderRoleOnly, FormationTemplate{},
                                        controller, {}, ids_of(reg));
    CHECK_FALSE(batch);
}

TEST_CASE("registry application: two nodes applying the same entries agree exactly") {
    TimerConfig timers;
    std::set<NodeId> members{0, 1, 2};
    AgentRegistry init = registry_of({{0, {0, 0}}, {1, {1, 0}}, {2, {0, 1}}});
    LeadershipPolicy scripted{LeadershipPolicy::ScriptedRotation, 20, std::nullopt};
    ClusterNode a(0, members, timers, 11, init, ControllerConfig{}, FormationTemplate{}, scripted,
                  FailurePolicy::LeaderRoleOnly);
    ClusterNode b(1, members, timers, 11, init, ControllerConfig{}, FormationTemplate{}, scripted,
                  FailurePolicy::LeaderRoleOnly);

    // Node 0 is scripted leader; replicate its traffic to node 1 by hand with
    // one frame of latency.
    std::vector<std::pair<NodeId, RaftMessage>> to_b;
    for (std::int64_t frame = 0; frame < 30; ++frame) {
        auto inbound_b = std::move(to_b);
        to_b.clear();
        auto ra = a.node_frame({}, frame, NodeId{0}, {});
        auto rb = b.node_frame(inbound_b, frame, NodeId{0}, {});
        for (auto& out : ra.outbound)
            if (out.to == 1) to_b.emplace_back(0, out.msg);
        // Replies from b back to a are dropped; local commit keeps a going.
    }
    CHECK(a.registry().applied_index == 30);
    CHECK(b.registry().applied_index == 29);  // one frame behind the leader
    // Identical prefix: re-deliver the final frame to b, then compare.
    auto inbound_b = std::move(to_b);
    b.node_frame(inbound_b, 30, NodeId{0}, {});
    CHECK(b.registry().applied_index == 30);
    CHECK(a.registry() == b.registry());
    REQUIRE(a.drained_history().size() == 30);
    REQUIRE(b.drained_history().size() == 30);
    for (std::size_t i = 0; i < a.drained_history().size(); ++i) {
        CHECK(a.drained_history()[i].index == b.drained_history()[i].index);
        CHECK(a.drained_history()[i].term == b.drained_history()[i].term);
    }
}

TEST_CASE("frozen agent never moves once the driver marks it frozen") {
    TimerConfig timers;
    std::set<NodeId> members{0, 1, 2};
    AgentRegistry init = registry_of({{0, {0.3, 0.1}}, {1, {-0.8, 0.4}}, {2, {0.5, -0.9}}});
    LeadershipPolicy scripted{LeadershipPolicy::ScriptedRotation, 1000, std::nullopt};
    ClusterNode leader(0, members, timers, 3, init, ControllerConfig{}, FormationTemplate{}, scripted,
                       FailurePolicy::FreezeAgent);
    Vec2 frozen_at;
    for (std::int64_t frame = 0; frame < 50; ++frame) {
        std::set<NodeId> frozen = frame >= 10 ? std::set<NodeId>{1} : std::set<NodeId>{};
        leader.node_frame({}, frame, NodeId{0}, frozen);
        if (frame == 9) frozen_at = leader.registry().agents.at(1).position;
        if (frame >= 10) CHECK(leader.registry().agents.at(1).position == frozen_at);
    }
    // The survivors keep converging toward their original pentagon... triangle vertices.
    auto verts = polygon_goals(FormationTemplate{}.with_sides(3));
    CHECK((leader.registry().agents.at(0).position - verts[0]).norm() <
          (init.agents.at(0).position - verts[0]).norm());
}

TEST_CASE("crash recovery rebuilds the registry from the replayed log") {
    TimerConfig timers;
    std::set<NodeId> members{0};
    AgentRegistry init = registry_of({{0, {1.5, -1.5}}});
    LeadershipPolicy scripted{LeadershipPolicy::ScriptedRotation, 1000, std::nullopt};
    ClusterNode node(0, members, timers, 5, init, ControllerConfig{}, FormationTemplate{}, scripted,
                     FailurePolicy::LeaderRoleOnly);
    for (std::int64_t frame = 0; frame < 10; ++frame) node.node_frame({}, frame, NodeId{0}, {});
    AgentRegistry before = node.registry();
    CHECK(before.applied_index == 10);

    auto record = node.persist();
    node.recover(record, 10);
    CHECK(node.registry().applied_index == 0);  // volatile state gone
    // Single-node cluster: the log recommits as soon as it leads again.
    for (std::int64_t frame = 10; frame < 40; ++frame) node.node_frame({}, frame, NodeId{0}, {});
    CHECK(node.registry().applied_index >= before.applied_index);
    // The replayed prefix reproduces the pre-crash positions at that index.
    ClusterNode replay(0, members, timers, 5, init, ControllerConfig{}, FormationTemplate{}, scripted,
                       FailurePolicy::LeaderRoleOnly);
    for (std::int64_t frame = 0; frame < 10; ++frame) replay.node_frame({}, frame, NodeId{0}, {});
    const auto& hist = node.drained_history();
    REQUIRE(hist.size() >= 10);
    const auto* b0 = std::get_if<PositionBatch>(&hist[9].command);
    REQUIRE(b0);
    CHECK(b0->updates[0].second == before.agents.at(0).position);
}
