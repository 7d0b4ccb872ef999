#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "raftform/rng.hpp"
#include "raftform/vec2.hpp"

namespace raftform {

using NodeId = int;
using Term = std::int64_t;
using LogIndex = std::int64_t;

enum class Role { Follower, Candidate, Leader };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::Follower: return "follower";
        case Role::Candidate: return "candidate";
        case Role::Leader: return "leader";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Commands and log entries
// ---------------------------------------------------------------------------

/// Batch of absolute agent positions, each agent id at most once.
struct PositionBatch {
    std::vector<std::pair<NodeId, Vec2>> updates;  // sorted by agent id
};

struct AddMember {
    NodeId node = 0;
};

struct RemoveMember {
    NodeId node = 0;
};

struct Noop {};

using Command = std::variant<PositionBatch, AddMember, RemoveMember, Noop>;

inline bool is_config_change(const Command& c) {
    return std::holds_alternative<AddMember>(c) || std::holds_alternative<RemoveMember>(c);
}

struct LogEntry {
    Term term = 0;
    LogIndex index = 0;
    Command command;
};

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct RequestVote {
    Term term = 0;
    NodeId candidate = 0;
    LogIndex last_log_index = 0;
    Term last_log_term = 0;
};

struct VoteReply {
    Term term = 0;
    bool granted = false;
};

struct AppendEntries {
    Term term = 0;
    NodeId leader = 0;
    LogIndex prev_index = 0;
    Term prev_term = 0;
    std::vector<LogEntry> entries;
    LogIndex leader_commit = 0;
};

struct AppendReply {
    Term term = 0;
    bool success = false;
    LogIndex match_index = 0;  // on failure: receiver's log length, as a catch-up hint
};

using RaftMessage = std::variant<RequestVote, VoteReply, AppendEntries, AppendReply>;

inline Term message_term(const RaftMessage& m) {
    return std::visit([](const auto& v) { return v.term; }, m);
}

struct Outbound {
    NodeId to = 0;
    RaftMessage msg;
};

// ---------------------------------------------------------------------------
// Timers
// ---------------------------------------------------------------------------

/// Frame-based timer bounds. Election timeouts are drawn per (seed, term)
/// with a node-id stagger, so any two members of the same term hold distinct
/// timeout durations. That removes split-vote ties while keeping draws
/// uniform on [min, max] across seeds.
struct TimerConfig {
    int heartbeat_interval = 2;
    int election_timeout_min = 6;
    int election_timeout_max = 12;

    void validate() const {
        if (heartbeat_interval <= 0 || election_timeout_min <= 0 ||
            election_timeout_min >= election_timeout_max ||
            heartbeat_interval >= election_timeout_min)
            throw std::invalid_argument("TimerConfig: need 0 < heartbeat < min < max");
    }

    int election_timeout(std::uint64_t seed, Term term, NodeId id) const {
        int span = election_timeout_max - election_timeout_min + 1;
        auto base = mix64(seed, static_cast<std::uint64_t>(term) * 0x51ed2701 + 17);
        return election_timeout_min +
               static_cast<int>((base + static_cast<std::uint64_t>(id)) % static_cast<std::uint64_t>(span));
    }
};

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Durable fields of a replica: current term, vote, and log.
struct PersistentRecord {
    Term term = 0;
    std::optional<NodeId> voted_for;
    std::vector<LogEntry> log;

    std::string encode() const;
    static std::optional<PersistentRecord> decode(const std::string& text);
};

namespace detail {

inline std::string encode_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string encode_command(const Command& c) {
    if (std::holds_alternative<Noop>(c)) return "noop";
    if (const auto* a = std::get_if<AddMember>(&c)) return "add " + std::to_string(a->node);
    if (const auto* r = std::get_if<RemoveMember>(&c)) return "remove " + std::to_string(r->node);
    const auto& b = std::get<PositionBatch>(c);
    std::string out = "pos";
    for (const auto& [id, p] : b.updates)
        out += " " + std::to_string(id) + ":" + encode_double(p.x) + ":" + encode_double(p.y);
    return out;
}

inline std::optional<Command> decode_command(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    if (!(in >> tag)) return std::nullopt;
    if (tag == "noop") return Command{Noop{}};
    if (tag == "add" || tag == "remove") {
        NodeId id;
        if (!(in >> id)) return std::nullopt;
        if (tag == "add") return Command{AddMember{id}};
        return Command{RemoveMember{id}};
    }
    if (tag == "pos") {
        PositionBatch batch;
        std::string item;
        while (in >> item) {
            auto c1 = item.find(':');
            auto c2 = item.find(':', c1 == std::string::npos ? c1 : c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos) return std::nullopt;
            try {
                NodeId id = std::stoi(item.substr(0, c1));
                double x = std::stod(item.substr(c1 + 1, c2 - c1 - 1));
                double y = std::stod(item.substr(c2 + 1));
                batch.updates.emplace_back(id, Vec2{x, y});
            } catch (...) {
                return std::nullopt;
            }
        }
        return Command{batch};
    }
    return std::nullopt;
}

}  // namespace detail

inline std::string PersistentRecord::encode() const {
    std::string out = "term=" + std::to_string(term) + " voted_for=" +
                      (voted_for ? std::to_string(*voted_for) : std::string("none")) + "\n";
    for (const auto& e : log)
        out += std::to_string(e.index) + " " + std::to_string(e.term) + " " +
               detail::encode_command(e.command) + "\n";
    return out;
}

inline std::optional<PersistentRecord> PersistentRecord::decode(const std::string& text) {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header)) return std::nullopt;
    PersistentRecord rec;
    {
        std::istringstream h(header);
        std::string t, v;
        if (!(h >> t >> v)) return std::nullopt;
        if (t.rfind("term=", 0) != 0 || v.rfind("voted_for=", 0) != 0) return std::nullopt;
        try {
            rec.term = std::stoll(t.substr(5));
        } catch (...) {
            return std::nullopt;
        }
        std::string vote = v.substr(10);
        if (vote != "none") {
            try {
                rec.voted_for = std::stoi(vote);
            } catch (...) {
                return std::nullopt;
            }
        }
    }
    std::string line;
    LogIndex expected = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream l(line);
        LogIndex idx;
        Term term;
        if (!(l >> idx >> term)) return std::nullopt;
        if (idx != expected) return std::nullopt;
        std::string rest;
        std::getline(l, rest);
        if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
        auto cmd = detail::decode_command(rest);
        if (!cmd) return std::nullopt;
        rec.log.push_back(LogEntry{term, idx, *cmd});
        ++expected;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Replica
// ---------------------------------------------------------------------------

struct RoleChange {
    Role role = Role::Follower;
    Term term = 0;
};

struct ProposeResult {
    bool ok = false;
    LogIndex index = 0;
    std::optional<NodeId> leader_hint;
    bool change_in_progress = false;
};

/// One node's Raft state machine. Transport-agnostic: time enters only via
/// the frame argument, messages leave as (destination, message) pairs.
/// Membership changes are single-server: one uncommitted config entry at a
/// time, effective on each replica as soon as the entry is appended.
class RaftReplica {
public:
    RaftReplica(NodeId id, std::set<NodeId> initial_members, TimerConfig timers,
                std::uint64_t seed)
        : id_(id),
          initial_members_(std::move(initial_members)),
          members_(initial_members_),
          timers_(timers),
          seed_(seed) {
        timers_.validate();
        election_deadline_ = timers_.election_timeout(seed_, current_term_, id_);
    }

    static RaftReplica restore(const PersistentRecord& rec, NodeId id,
                               std::set<NodeId> initial_members, TimerConfig timers,
                               std::uint64_t seed, std::int64_t frame) {
        RaftReplica r(id, std::move(initial_members), timers, seed);
        r.current_term_ = rec.term;
        r.voted_for_ = rec.voted_for;
        r.log_ = rec.log;
        r.recompute_members();
        r.election_deadline_ = frame + timers.election_timeout(seed, rec.term, id);
        return r;
    }

    NodeId id() const { return id_; }
    Role role() const { return role_; }
    Term current_term() const { return current_term_; }
    std::optional<NodeId> voted_for() const { return voted_for_; }
    std::optional<NodeId> leader_hint() const { return leader_hint_; }
    const std::vector<LogEntry>& log() const { return log_; }
    LogIndex commit_index() const { return commit_index_; }
    LogIndex last_applied() const { return last_applied_; }
    const std::set<NodeId>& members() const { return members_; }
    int quorum_size() const { return static_cast<int>(members_.size()) / 2 + 1; }
    bool is_member() const { return members_.count(id_) > 0; }

    /// Role transitions accumulated since the last call, oldest first.
    std::vector<RoleChange> take_transitions() { return std::exchange(transitions_, {}); }

    /// Timer-driven step: start/retry elections, send heartbeats.
    std::vector<Outbound> tick(std::int64_t frame) {
        std::vector<Outbound> out;
        if (role_ == Role::Leader) {
            if (frame >= heartbeat_deadline_) {
                heartbeat_deadline_ = frame + timers_.heartbeat_interval;
                append_to_peers(out);
            }
            return out;
        }
        // Non-members stay dormant until a config entry brings them in.
        if (!is_member()) return out;
        if (frame >= election_deadline_) start_election(frame, out);
        return out;
    }

    std::vector<Outbound> handle_message(NodeId from, const RaftMessage& msg,
                                         std::int64_t frame) {
        std::vector<Outbound> out;
        Term t = message_term(msg);
        if (t > current_term_) become_follower(t);

        if (const auto* rv = std::get_if<RequestVote>(&msg)) {
            handle_request_vote(from, *rv, frame, out);
        } else if (const auto* vr = std::get_if<VoteReply>(&msg)) {
            handle_vote_reply(from, *vr, frame, out);
        } else if (const auto* ae = std::get_if<AppendEntries>(&msg)) {
            handle_append_entries(from, *ae, frame, out);
        } else if (const auto* ar = std::get_if<AppendReply>(&msg)) {
            handle_append_reply(from, *ar, out);
        }
        return out;
    }

    /// Leader-only append of a client command.
    ProposeResult propose(const Command& cmd) {
        if (role_ != Role::Leader) return {false, 0, leader_hint_, false};
        LogIndex index = last_log_index() + 1;
        log_.push_back(LogEntry{current_term_, index, cmd});
        if (is_config_change(cmd)) recompute_members();
        maybe_advance_commit();
        return {true, index, id_, false};
    }

    /// Single-server membership change; rejected while a previous config
    /// entry is still uncommitted.
    ProposeResult change_membership(const Command& change) {
        if (!is_config_change(change)) throw std::invalid_argument("not a config change");
        if (role_ != Role::Leader) return {false, 0, leader_hint_, false};
        for (LogIndex i = commit_index_ + 1; i <= last_log_index(); ++i)
            if (is_config_change(entry(i).command)) return {false, 0, id_, true};
        auto result = propose(change);
        if (result.ok) {
            if (const auto* a = std::get_if<AddMember>(&change)) {
                next_index_[a->node] = last_log_index() + 1;
                match_index_[a->node] = 0;
            }
        }
        return result;
    }

    /// Entries newly committed since the last call, in index order.
    std::vector<LogEntry> drain_committed() {
        std::vector<LogEntry> out;
        while (last_applied_ < commit_index_) {
            ++last_applied_;
            out.push_back(entry(last_applied_));
        }
        return out;
    }

    PersistentRecord persist() const { return PersistentRecord{current_term_, voted_for_, log_}; }

    /// Scripted-rotation mode: append a command at the current term and mark
    /// it committed locally (the caller owns leadership; Raft elections are
    /// not running). Returns replication messages for all other members.
    std::pair<LogIndex, std::vector<Outbound>> append_and_commit_local(const Command& cmd) {
        LogIndex prev = last_log_index();
        Term prev_term = prev > 0 ? entry(prev).term : 0;
        log_.push_back(LogEntry{current_term_, prev + 1, cmd});
        if (is_config_change(cmd)) recompute_members();
        commit_index_ = last_log_index();
        std::vector<Outbound> out;
        for (NodeId peer : members_) {
            if (peer == id_) continue;
            out.push_back({peer, AppendEntries{current_term_, id_, prev, prev_term,
                                               {log_.back()}, commit_index_}});
        }
        return {prev + 1, std::move(out)};
    }

private:
    LogIndex last_log_index() const { return static_cast<LogIndex>(log_.size()); }
    Term last_log_term() const { return log_.empty() ? 0 : log_.back().term; }
    const LogEntry& entry(LogIndex i) const { return log_[static_cast<std::size_t>(i - 1)]; }

    void note_role(Role r) {
        role_ = r;
        transitions_.push_back({r, current_term_});
    }

    void become_follower(Term t) {
        if (t > current_term_) {
            current_term_ = t;
            voted_for_.reset();
        }
        if (role_ != Role::Follower) note_role(Role::Follower);
        votes_.clear();
        next_index_.clear();
        match_index_.clear();
    }

    void reset_election_deadline(std::int64_t frame) {
        election_deadline_ = frame + timers_.election_timeout(seed_, current_term_, id_);
    }

    void start_election(std::int64_t frame, std::vector<Outbound>& out) {
        ++current_term_;
        voted_for_ = id_;
        votes_ = {id_};
        note_role(Role::Candidate);
        reset_election_deadline(frame);
        for (NodeId peer : members_) {
            if (peer == id_) continue;
            out.push_back({peer, RequestVote{current_term_, id_, last_log_index(), last_log_term()}});
        }
        maybe_become_leader(frame, out);
    }

    void maybe_become_leader(std::int64_t frame, std::vector<Outbound>& out) {
        if (role_ != Role::Candidate) return;
        if (static_cast<int>(votes_.size()) < quorum_size()) return;
        note_role(Role::Leader);
        leader_hint_ = id_;
        next_index_.clear();
        match_index_.clear();
        for (NodeId peer : members_) {
            if (peer == id_) continue;
            next_index_[peer] = last_log_index() + 1;
            match_index_[peer] = 0;
        }
        heartbeat_deadline_ = frame + timers_.heartbeat_interval;
        append_to_peers(out);
    }

    void append_to_peers(std::vector<Outbound>& out) {
        for (NodeId peer : members_) {
            if (peer == id_) continue;
            out.push_back({peer, make_append(peer)});
        }
    }

    AppendEntries make_append(NodeId peer) {
        auto it = next_index_.find(peer);
        LogIndex next = it != next_index_.end() ? it->second : last_log_index() + 1;
        if (next < 1) next = 1;
        LogIndex prev = next - 1;
        Term prev_term = prev > 0 ? entry(prev).term : 0;
        std::vector<LogEntry> entries(log_.begin() + static_cast<std::ptrdiff_t>(prev),
                                      log_.end());
        return AppendEntries{current_term_, id_, prev, prev_term, std::move(entries),
                             commit_index_};
    }

    void handle_request_vote(NodeId from, const RequestVote& rv, std::int64_t frame,
                             std::vector<Outbound>& out) {
        bool grant = false;
        if (rv.term == current_term_ && (!voted_for_ || *voted_for_ == rv.candidate)) {
            bool up_to_date = rv.last_log_term > last_log_term() ||
                              (rv.last_log_term == last_log_term() &&
                               rv.last_log_index >= last_log_index());
            if (up_to_date && role_ == Role::Follower) {
                grant = true;
                voted_for_ = rv.candidate;
                reset_election_deadline(frame);
            }
        }
        out.push_back({from, VoteReply{current_term_, grant}});
    }

    void handle_vote_reply(NodeId from, const VoteReply& vr, std::int64_t frame,
                           std::vector<Outbound>& out) {
        if (role_ != Role::Candidate || vr.term != current_term_ || !vr.granted) return;
        votes_.insert(from);
        maybe_become_leader(frame, out);
    }

    void handle_append_entries(NodeId from, const AppendEntries& ae, std::int64_t frame,
                               std::vector<Outbound>& out) {
        if (ae.term < current_term_) {
            out.push_back({from, AppendReply{current_term_, false, last_log_index()}});
            return;
        }
        // Current leader's authority: candidates step down, deadline resets.
        if (role_ != Role::Follower) become_follower(ae.term);
        leader_hint_ = ae.leader;
        reset_election_deadline(frame);

        if (ae.prev_index > last_log_index() ||
            (ae.prev_index > 0 && entry(ae.prev_index).term != ae.prev_term)) {
            LogIndex hint = std::min(last_log_index(), ae.prev_index > 0 ? ae.prev_index - 1 : 0);
            out.push_back({from, AppendReply{current_term_, false, hint}});
            return;
        }
        bool mutated = false;
        for (const LogEntry& e : ae.entries) {
            if (e.index <= last_log_index()) {
                if (entry(e.index).term == e.term) continue;  // already have it
                log_.resize(static_cast<std::size_t>(e.index - 1));  // conflict: truncate
                mutated = true;
            }
            log_.push_back(e);
            mutated = true;
        }
        if (mutated) recompute_members();
        LogIndex new_commit = std::min<LogIndex>(ae.leader_commit, last_log_index());
        if (new_commit > commit_index_) commit_index_ = new_commit;
        out.push_back({from, AppendReply{current_term_, true,
                                         ae.prev_index + static_cast<LogIndex>(ae.entries.size())}});
    }

    void handle_append_reply(NodeId from, const AppendReply& ar, std::vector<Outbound>& out) {
        if (role_ != Role::Leader || ar.term != current_term_) return;
        if (!members_.count(from)) return;
        if (ar.success) {
            if (ar.match_index > match_index_[from]) match_index_[from] = ar.match_index;
            next_index_[from] = match_index_[from] + 1;
            maybe_advance_commit();
            // Keep lagging peers catching up without waiting for a heartbeat.
            if (match_index_[from] < last_log_index()) out.push_back({from, make_append(from)});
        } else {
            LogIndex next = std::min(next_index_[from] - 1, ar.match_index + 1);
            next_index_[from] = std::max<LogIndex>(1, next);
            out.push_back({from, make_append(from)});
        }
    }

    void maybe_advance_commit() {
        if (role_ != Role::Leader) return;
        for (LogIndex idx = last_log_index(); idx > commit_index_; --idx) {
            if (entry(idx).term != current_term_) break;  // only own-term entries commit by count
            int count = 0;
            for (NodeId m : members_) {
                if (m == id_) {
                    ++count;
                } else {
                    auto it = match_index_.find(m);
                    if (it != match_index_.end() && it->second >= idx) ++count;
                }
            }
            if (count >= quorum_size()) {
                commit_index_ = idx;
                break;
            }
        }
    }

    /// Membership is the initial configuration plus every config entry in
    /// the log, effective at append time. Recomputed after any log mutation
    /// so truncation rolls configuration back too.
    void recompute_members() {
        members_ = initial_members_;
        for (const LogEntry& e : log_) {
            if (const auto* a = std::get_if<AddMember>(&e.command)) members_.insert(a->node);
            if (const auto* r = std::get_if<RemoveMember>(&e.command)) members_.erase(r->node);
        }
    }

    NodeId id_;
    std::set<NodeId> initial_members_;
    std::set<NodeId> members_;
    TimerConfig timers_;
    std::uint64_t seed_;

    Role role_ = Role::Follower;
    Term current_term_ = 0;
    std::optional<NodeId> voted_for_;
    std::optional<NodeId> leader_hint_;
    std::vector<LogEntry> log_;
    LogIndex commit_index_ = 0;
    LogIndex last_applied_ = 0;

    std::int64_t election_deadline_ = 0;
    std::int64_t heartbeat_deadline_ = 0;
    std::set<NodeId> votes_;
    std::map<NodeId, LogIndex> next_index_;
    std::map<NodeId, LogIndex> match_index_;
    std::vector<RoleChange> transitions_;
};

}  // namespace raftform
