#pragma once

#include <cstdint>
#include <string>

#include "raftform/raft.hpp"

namespace raftform {

/// One protocol event row: role changes, failure detection, and scripted
/// fault injections, in the order they occurred.
struct EventRecord {
    std::string type;  // candidate | leader | failure | simulate failure | simulate recovery
    std::string node;
    Term term = 0;
    std::int64_t frame = 0;
};

inline std::string node_label(NodeId id) { return std::to_string(id); }

}  // namespace raftform
