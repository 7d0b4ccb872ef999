#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "raftform/vec2.hpp"

namespace raftform {

/// Undirected formation graph G = (V, E). Connectivity is enforced at
/// construction since the control law only converges on connected graphs.
class FormationGraph {
public:
    FormationGraph(int n, std::vector<std::pair<int, int>> edges) : n_(n) {
        if (n <= 0) throw std::invalid_argument("FormationGraph: n must be positive");
        std::set<std::pair<int, int>> unique;
        for (auto [i, j] : edges) {
            if (i == j) throw std::invalid_argument("FormationGraph: self-loop");
            if (i < 0 || j < 0 || i >= n || j >= n)
                throw std::invalid_argument("FormationGraph: vertex out of range");
            if (j < i) std::swap(i, j);
            if (!unique.insert({i, j}).second)
                throw std::invalid_argument("FormationGraph: duplicate edge");
        }
        edges_.assign(unique.begin(), unique.end());
        adjacency_.assign(static_cast<std::size_t>(n), {});
        for (auto [i, j] : edges_) {
            adjacency_[static_cast<std::size_t>(i)].push_back(j);
            adjacency_[static_cast<std::size_t>(j)].push_back(i);
        }
        if (!connected()) throw std::invalid_argument("FormationGraph: graph not connected");
    }

    static FormationGraph complete(int n) {
        std::vector<std::pair<int, int>> e;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
        return FormationGraph(n, std::move(e));
    }

    int size() const { return n_; }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }
    const std::vector<int>& neighbors(int i) const { return adjacency_[static_cast<std::size_t>(i)]; }
    int degree(int i) const { return static_cast<int>(neighbors(i).size()); }
    int max_degree() const {
        int d = 0;
        for (int i = 0; i < n_; ++i) d = std::max(d, degree(i));
        return d;
    }

private:
    bool connected() const {
        std::vector<char> seen(static_cast<std::size_t>(n_), 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        int count = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int w : neighbors(v)) {
                if (!seen[static_cast<std::size_t>(w)]) {
                    seen[static_cast<std::size_t>(w)] = 1;
                    ++count;
                    stack.push_back(w);
                }
            }
        }
        return count == n_;
    }

    int n_;
    std::vector<std::pair<int, int>> edges_;
    std::vector<std::vector<int>> adjacency_;
};

/// Dense n x n Laplacian, row-major.
class LaplacianMatrix {
public:
    explicit LaplacianMatrix(int n) : n_(n), data_(static_cast<std::size_t>(n) * n, 0.0) {}

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * n_ + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * n_ + j]; }
    int size() const { return n_; }

private:
    int n_;
    std::vector<double> data_;
};

/// L = D - A for the given graph.
inline LaplacianMatrix laplacian(const FormationGraph& graph) {
    LaplacianMatrix L(graph.size());
    for (int i = 0; i < graph.size(); ++i) L.at(i, i) = graph.degree(i);
    for (auto [i, j] : graph.edges()) {
        L.at(i, j) = -1.0;
        L.at(j, i) = -1.0;
    }
    return L;
}

/// Gain and integration step for the formation controller.
struct ControllerConfig {
    double gain = 1.0;
    double dt = 0.05;

    void validate() const {
        if (!(gain > 0.0)) throw std::invalid_argument("ControllerConfig: gain must be positive");
        if (!(dt > 0.0)) throw std::invalid_argument("ControllerConfig: dt must be positive");
    }

    /// Explicit-Euler stability guard. lambda_max(L) <= 2 * max_degree, so
    /// gain * dt * 2 * max_degree < 2 is sufficient.
    bool stable_for(const FormationGraph& graph) const {
        return gain * dt * 2.0 * graph.max_degree() < 2.0;
    }
};

/// Regular polygon target: vertex i at center + radius * (cos a, sin a),
/// a = 2*pi*i/sides + phase.
struct FormationSpec {
    int sides = 0;
    double radius = 1.0;
    Vec2 center{0.0, 0.0};
    double phase = 0.0;
};

inline std::vector<Vec2> polygon_goals(const FormationSpec& spec) {
    if (spec.sides < 1) throw std::invalid_argument("polygon_goals: sides must be >= 1");
    if (!(spec.radius > 0.0)) throw std::invalid_argument("polygon_goals: radius must be positive");
    std::vector<Vec2> goals;
    goals.reserve(static_cast<std::size_t>(spec.sides));
    for (int i = 0; i < spec.sides; ++i) {
        double a = 2.0 * std::numbers::pi * i / spec.sides + spec.phase;
        goals.push_back(spec.center + spec.radius * Vec2{std::cos(a), std::sin(a)});
    }
    return goals;
}

/// Per-edge formation errors e_ij = (x_j - x_i) - (x_j* - x_i*), stored once
/// per unordered edge; lookups for the reversed pair return the negation.
class EdgeErrorMap {
public:
    EdgeErrorMap(const FormationGraph& graph, std::vector<Vec2> values)
        : graph_(&graph), values_(std::move(values)) {}

    /// Error for directed pair (i, j); zero for non-edges.
    Vec2 at(int i, int j) const {
        const auto& edges = graph_->edges();
        for (std::size_t k = 0; k < edges.size(); ++k) {
            if (edges[k].first == std::min(i, j) && edges[k].second == std::max(i, j))
                return i < j ? values_[k] : -values_[k];
        }
        return {0.0, 0.0};
    }

    const std::vector<Vec2>& per_edge() const { return values_; }
    const FormationGraph& graph() const { return *graph_; }

private:
    const FormationGraph* graph_;
    std::vector<Vec2> values_;
};

inline EdgeErrorMap formation_errors(const std::vector<Vec2>& positions,
                                     const std::vector<Vec2>& goals,
                                     const FormationGraph& graph) {
    const auto n = static_cast<std::size_t>(graph.size());
    if (positions.size() != n || goals.size() != n)
        throw std::invalid_argument("formation_errors: length mismatch");
    std::vector<Vec2> values;
    values.reserve(graph.edges().size());
    for (auto [i, j] : graph.edges()) {
        Vec2 d = positions[static_cast<std::size_t>(j)] - positions[static_cast<std::size_t>(i)];
        Vec2 d_star = goals[static_cast<std::size_t>(j)] - goals[static_cast<std::size_t>(i)];
        values.push_back(d - d_star);
    }
    return EdgeErrorMap(graph, std::move(values));
}

/// u_i = -k * sum_{j != i} L_ij e_ij. Off-diagonal L_ij is -1 on edges and 0
/// elsewhere, so this reduces to k * sum over neighbors of e_ij.
inline std::vector<Vec2> control_inputs(const std::vector<Vec2>& positions,
                                        const std::vector<Vec2>& goals,
                                        const FormationGraph& graph,
                                        const ControllerConfig& config) {
    config.validate();
    EdgeErrorMap errors = formation_errors(positions, goals, graph);
    std::vector<Vec2> inputs(static_cast<std::size_t>(graph.size()));
    const auto& edges = graph.edges();
    for (std::size_t k = 0; k < edges.size(); ++k) {
        auto [i, j] = edges[k];
        Vec2 e = errors.per_edge()[k];
        inputs[static_cast<std::size_t>(i)] += config.gain * e;
        inputs[static_cast<std::size_t>(j)] -= config.gain * e;
    }
    return inputs;
}

/// x_i <- x_i + dt * u_i.
inline std::vector<Vec2> euler_step(const std::vector<Vec2>& positions,
                                    const std::vector<Vec2>& inputs, double dt) {
    if (positions.size() != inputs.size())
        throw std::invalid_argument("euler_step: length mismatch");
    if (!(dt > 0.0)) throw std::invalid_argument("euler_step: dt must be positive");
    std::vector<Vec2> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) out[i] = positions[i] + dt * inputs[i];
    return out;
}

/// E = 0.5 * sum over edges of |e_ij|^2.
inline double global_error(const EdgeErrorMap& errors) {
    double e = 0.0;
    for (const Vec2& v : errors.per_edge()) e += v.norm2();
    return 0.5 * e;
}

}  // namespace raftform
