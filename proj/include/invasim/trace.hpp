#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "invasim/topology.hpp"

namespace invasim {

// One event record per line, `time=` `seq=` `kind=` first, then kind-specific
// payload keys in a fixed order. The serialization is bit-exact so two runs
// can be compared byte for byte.
enum class RecordKind {
    RunBegin,
    TileAcquired,
    TileReleased,
    InvadeOk,
    InvadeRejected,
    Retreat,
    PhaseChange,
    CandidateSelected,
    TeamAssembled,
    IletStage,
    TeamComplete,
    Dispatch,
    OversupplyGrant,
    Stall,
    UndersupplyViolation,
    Mask,
    Unmask,
    ExecStart,
    ExecEnd,
    Warning,
    AppAborted,
    Deadlock,
    RunEnd,
};

inline const char* to_string(RecordKind k) {
    switch (k) {
        case RecordKind::RunBegin: return "run_begin";
        case RecordKind::TileAcquired: return "tile_acquired";
        case RecordKind::TileReleased: return "tile_released";
        case RecordKind::InvadeOk: return "invade_ok";
        case RecordKind::InvadeRejected: return "invade_rejected";
        case RecordKind::Retreat: return "retreat";
        case RecordKind::PhaseChange: return "phase_change";
        case RecordKind::CandidateSelected: return "candidate_selected";
        case RecordKind::TeamAssembled: return "team_assembled";
        case RecordKind::IletStage: return "ilet_stage";
        case RecordKind::TeamComplete: return "team_complete";
        case RecordKind::Dispatch: return "dispatch";
        case RecordKind::OversupplyGrant: return "oversupply_grant";
        case RecordKind::Stall: return "stall";
        case RecordKind::UndersupplyViolation: return "undersupply_violation";
        case RecordKind::Mask: return "mask";
        case RecordKind::Unmask: return "unmask";
        case RecordKind::ExecStart: return "exec_start";
        case RecordKind::ExecEnd: return "exec_end";
        case RecordKind::Warning: return "warning";
        case RecordKind::AppAborted: return "app_aborted";
        case RecordKind::Deadlock: return "deadlock";
        case RecordKind::RunEnd: return "run_end";
    }
    return "?";
}

inline std::optional<RecordKind> record_kind_from_name(std::string_view name) {
    for (int k = static_cast<int>(RecordKind::RunBegin); k <= static_cast<int>(RecordKind::RunEnd);
         ++k) {
        if (name == to_string(static_cast<RecordKind>(k))) {
            return static_cast<RecordKind>(k);
        }
    }
    return std::nullopt;
}

struct TraceRecord {
    Time time = 0;
    std::uint64_t seq = 0;
    RecordKind kind = RecordKind::RunBegin;
    std::vector<std::pair<std::string, std::string>> fields;

    TraceRecord() = default;
    TraceRecord(Time t, std::uint64_t s, RecordKind k) : time(t), seq(s), kind(k) {}

    TraceRecord& with(std::string_view key, std::string value) {
        fields.emplace_back(std::string(key), std::move(value));
        return *this;
    }
    TraceRecord& with(std::string_view key, std::int64_t value) {
        return with(key, std::to_string(value));
    }
    TraceRecord& with(std::string_view key, int value) {
        return with(key, std::to_string(value));
    }
    TraceRecord& with(std::string_view key, std::uint32_t value) {
        return with(key, std::to_string(value));
    }
    TraceRecord& with(std::string_view key, std::uint64_t value) {
        return with(key, std::to_string(value));
    }
    TraceRecord& with(std::string_view key, const CoreId& id) {
        return with(key, invasim::to_string(id));
    }

    const std::string* find(std::string_view key) const {
        for (const auto& [k, v] : fields) {
            if (k == key) {
                return &v;
            }
        }
        return nullptr;
    }
    const std::string& get(std::string_view key) const {
        const std::string* v = find(key);
        if (v == nullptr) {
            throw std::runtime_error(std::string("trace record ") + to_string(kind) +
                                     ": missing field '" + std::string(key) + "'");
        }
        return *v;
    }
    std::int64_t get_int(std::string_view key) const { return std::stoll(get(key)); }
};

inline std::string to_line(const TraceRecord& rec) {
    std::string out = "time=" + std::to_string(rec.time) + " seq=" + std::to_string(rec.seq) +
                      " kind=" + to_string(rec.kind);
    for (const auto& [k, v] : rec.fields) {
        out += " " + k + "=" + v;
    }
    return out;
}

inline std::string serialize_trace(std::span<const TraceRecord> trace) {
    std::string out;
    for (const TraceRecord& rec : trace) {
        out += to_line(rec);
        out += '\n';
    }
    return out;
}

inline TraceRecord parse_trace_line(std::string_view line) {
    TraceRecord rec;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && line[pos] == ' ') {
            ++pos;
        }
        if (pos >= line.size()) {
            break;
        }
        const std::size_t end = std::min(line.find(' ', pos), line.size());
        std::string_view token = line.substr(pos, end - pos);
        const std::size_t eq = token.find('=');
        if (eq == std::string_view::npos) {
            throw std::runtime_error("trace: malformed token '" + std::string(token) + "'");
        }
        pairs.emplace_back(std::string(token.substr(0, eq)), std::string(token.substr(eq + 1)));
        pos = end;
    }
    if (pairs.size() < 3 || pairs[0].first != "time" || pairs[1].first != "seq" ||
        pairs[2].first != "kind") {
        throw std::runtime_error("trace: line must start with time= seq= kind=");
    }
    rec.time = std::stoll(pairs[0].second);
    rec.seq = std::stoull(pairs[1].second);
    auto kind = record_kind_from_name(pairs[2].second);
    if (!kind) {
        throw std::runtime_error("trace: unknown record kind '" + pairs[2].second + "'");
    }
    rec.kind = *kind;
    rec.fields.assign(pairs.begin() + 3, pairs.end());
    return rec;
}

inline std::vector<TraceRecord> parse_trace(std::string_view text) {
    std::vector<TraceRecord> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty()) {
            out.push_back(parse_trace_line(line));
        }
        pos = end + 1;
    }
    return out;
}

// "1.2" -> CoreId{1, 2}
inline CoreId parse_core_id(std::string_view text) {
    const std::size_t dot = text.find('.');
    if (dot == std::string_view::npos) {
        throw std::runtime_error("trace: malformed core id '" + std::string(text) + "'");
    }
    return CoreId{std::stoi(std::string(text.substr(0, dot))),
                  std::stoi(std::string(text.substr(dot + 1)))};
}

// "0.1,1.0" -> vector of CoreId; "-" is the empty list.
inline std::vector<CoreId> parse_slot_list(std::string_view text) {
    std::vector<CoreId> out;
    if (text == "-") {
        return out;
    }
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find(',', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        out.push_back(parse_core_id(text.substr(pos, end - pos)));
        pos = end + 1;
        if (end == text.size()) {
            break;
        }
    }
    return out;
}

inline std::string format_slot_list(std::span<const CoreId> slots) {
    if (slots.empty()) {
        return "-";
    }
    std::string out;
    for (const CoreId& s : slots) {
        if (!out.empty()) {
            out += ',';
        }
        out += to_string(s);
    }
    return out;
}

}  // namespace invasim
