#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "raftform/scenario.hpp"

namespace raftform {

struct ExportConfig {
    std::filesystem::path out_dir = "out";
    std::string format = "csv";  // csv | json
    bool plot = false;
    bool force = false;
};

namespace detail {

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& content, bool force) {
    if (!force && std::filesystem::exists(path))
        throw std::runtime_error("refusing to overwrite " + path.string() +
                                 " (pass --force to allow)");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

// --- CSV tables ---

inline std::string trajectories_csv(const RunRecord& r) {
    std::string out = "frame,agent,x,y\n";
    for (std::size_t f = 0; f < r.trajectories.size(); ++f)
        for (const auto& [agent, p] : r.trajectories[f])
            out += std::to_string(f) + "," + std::to_string(agent) + "," + fixed6(p.x) + "," +
                   fixed6(p.y) + "\n";
    return out;
}

inline std::string errors_csv(const RunRecord& r) {
    std::string out = "frame,agent,error\n";
    for (std::size_t f = 0; f < r.per_agent_error.size(); ++f)
        for (const AgentError& e : r.per_agent_error[f])
            out += std::to_string(f) + "," + std::to_string(e.agent) + "," + fixed6(e.error) + "\n";
    return out;
}

inline std::string global_csv(const RunRecord& r) {
    std::string out = "frame,E\n";
    for (std::size_t f = 0; f < r.global_error.size(); ++f)
        out += std::to_string(f) + "," + fixed6(r.global_error[f]) + "\n";
    return out;
}

inline std::string events_csv(const RunRecord& r) {
    std::string out = "type,node,term,frame\n";
    for (const EventRecord& e : r.events)
        out += e.type + "," + e.node + "," + std::to_string(e.term) + "," +
               std::to_string(e.frame) + "\n";
    return out;
}

inline std::string final_csv(const RunRecord& r) {
    std::string out = "agent,x,y\n";
    for (const auto& [agent, p] : r.final_positions)
        out += std::to_string(agent) + "," + fixed6(p.x) + "," + fixed6(p.y) + "\n";
    return out;
}

// --- SVG line charts (a convenience rendering of the CSV data) ---

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

inline std::string svg_chart(const std::vector<Series>& series, const std::string& title,
                             int width = 640, int height = 480) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double margin = 40.0;
    auto sx = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto sy = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(width) + "\" height=\"" + std::to_string(height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + fixed6(width / 2.0) + "\" y=\"20\" text-anchor=\"middle\">" + title +
           "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        out += "<polyline fill=\"none\" stroke=\"" + std::string(colors[i % 8]) +
               "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : series[i].points)
            out += fixed6(sx(x)) + "," + fixed6(sy(y)) + " ";
        out += "\"/>\n";
        out += "<text x=\"" + fixed6(width - 35.0) + "\" y=\"" + fixed6(30.0 + 14.0 * i) +
               "\" fill=\"" + colors[i % 8] + "\" font-size=\"11\">" + series[i].label +
               "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace detail

/// Writes the run record to out_dir. CSV mode emits the five tables; JSON
/// mode emits one document embedding the same values. --plot adds SVG charts.
inline std::vector<std::filesystem::path> write_outputs(const RunRecord& record,
                                                        const ExportConfig& config) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        fs::path p = config.out_dir / name;
        detail::write_file(p, content, config.force);
        written.push_back(p);
    };

    if (config.format == "json") {
        nlohmann::json doc;
        doc["scenario"] = std::string(1, record.spec.label);
        doc["seed"] = record.spec.seed;
        auto& traj = doc["trajectories"] = nlohmann::json::array();
        for (std::size_t f = 0; f < record.trajectories.size(); ++f)
            for (const auto& [agent, p] : record.trajectories[f])
                traj.push_back({{"frame", f},
                                {"agent", agent},
                                {"x", detail::fixed6(p.x)},
                                {"y", detail::fixed6(p.y)}});
        auto& errs = doc["errors"] = nlohmann::json::array();
        for (std::size_t f = 0; f < record.per_agent_error.size(); ++f)
            for (const AgentError& e : record.per_agent_error[f])
                errs.push_back(
                    {{"frame", f}, {"agent", e.agent}, {"error", detail::fixed6(e.error)}});
        auto& glob = doc["global"] = nlohmann::json::array();
        for (std::size_t f = 0; f < record.global_error.size(); ++f)
            glob.push_back({{"frame", f}, {"E", detail::fixed6(record.global_error[f])}});
        auto& events = doc["events"] = nlohmann::json::array();
        for (const EventRecord& e : record.events)
            events.push_back(
                {{"type", e.type}, {"node", e.node}, {"term", e.term}, {"frame", e.frame}});
        auto& fin = doc["final"] = nlohmann::json::array();
        for (const auto& [agent, p] : record.final_positions)
            fin.push_back(
                {{"agent", agent}, {"x", detail::fixed6(p.x)}, {"y", detail::fixed6(p.y)}});
        emit("run.json", doc.dump(2) + "\n");
    } else {
        emit("trajectories.csv", detail::trajectories_csv(record));
        emit("errors.csv", detail::errors_csv(record));
        emit("global.csv", detail::global_csv(record));
        emit("events.csv", detail::events_csv(record));
        emit("final.csv", detail::final_csv(record));
    }

    if (config.plot) {
        std::map<NodeId, detail::Series> traj_x, err_series;
        for (std::size_t f = 0; f < record.trajectories.size(); ++f)
            for (const auto& [agent, p] : record.trajectories[f]) {
                auto& s = traj_x[agent];
                s.label = "agent " + std::to_string(agent);
                s.points.emplace_back(p.x, p.y);
            }
        for (std::size_t f = 0; f < record.per_agent_error.size(); ++f)
            for (const AgentError& e : record.per_agent_error[f]) {
                auto& s = err_series[e.agent];
                s.label = "agent " + std::to_string(e.agent);
                s.points.emplace_back(static_cast<double>(f), e.error);
            }
        std::vector<detail::Series> ts, es;
        for (auto& [id, s] : traj_x) ts.push_back(std::move(s));
        for (auto& [id, s] : err_series) es.push_back(std::move(s));
        emit("trajectories.svg", detail::svg_chart(ts, "Agent trajectories (x vs y)"));
        emit("errors.svg", detail::svg_chart(es, "Per-agent error over time"));
    }
    return written;
}

}  // namespace raftform
