#pragma once

#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <variant>

#include "invasim/topology.hpp"

namespace invasim {

enum class PlacementKind { AnyTile, SameTile, MaxTiles };

struct Placement {
    PlacementKind kind = PlacementKind::AnyTile;
    int max_tiles = 0;  // meaningful only for MaxTiles
    auto operator<=>(const Placement&) const = default;

    // Upper bound on the number of tiles a matching claim may span.
    int tile_cap(int machine_tiles) const {
        switch (kind) {
            case PlacementKind::SameTile: return 1;
            case PlacementKind::MaxTiles: return std::min(max_tiles, machine_tiles);
            case PlacementKind::AnyTile: return machine_tiles;
        }
        return machine_tiles;
    }
};

enum class Sharing { Exclusive, SpatialShareable, TemporalShareable, BothShareable };

// Spatial sharing permits co-residency of another claim on the same tile;
// temporal sharing permits time-sharing of a core between claims.
inline bool spatial_shareable(Sharing s) {
    return s == Sharing::SpatialShareable || s == Sharing::BothShareable;
}
inline bool temporal_shareable(Sharing s) {
    return s == Sharing::TemporalShareable || s == Sharing::BothShareable;
}

enum class SupplyPolicy { Reject, Tolerate };

struct ConstraintSet {
    int cores_min = 1;
    int cores_max = 1;
    Placement placement{};
    double benefit = 0.0;
    Sharing sharing = Sharing::Exclusive;
    SupplyPolicy oversupply = SupplyPolicy::Reject;
    SupplyPolicy undersupply = SupplyPolicy::Reject;

    bool operator==(const ConstraintSet&) const = default;
};

inline void require_valid(const ConstraintSet& cs) {
    if (cs.cores_min < 1) {
        throw std::invalid_argument("constraints: cores_min must be >= 1");
    }
    if (cs.cores_max < cs.cores_min) {
        throw std::invalid_argument("constraints: cores_max must be >= cores_min");
    }
    if (cs.placement.kind == PlacementKind::MaxTiles && cs.placement.max_tiles < 1) {
        throw std::invalid_argument("constraints: maxtiles requires k >= 1");
    }
    if (!(cs.benefit >= 0.0)) {
        throw std::invalid_argument("constraints: benefit must be non-negative");
    }
}

struct ParseDiagnostic {
    std::size_t position = 0;  // character offset into the input
    std::string message;
};

using ParseResult = std::variant<ConstraintSet, ParseDiagnostic>;

inline bool parse_ok(const ParseResult& r) { return std::holds_alternative<ConstraintSet>(r); }

namespace detail {

struct ConstraintCursor {
    std::string_view text;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < text.size() &&
               (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\n' || text[pos] == '\r')) {
            ++pos;
        }
    }
    bool at_end() {
        skip_ws();
        return pos >= text.size();
    }
    bool accept(char c) {
        skip_ws();
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }
};

inline bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

}  // namespace detail

// Parses a constraint expression:
//   expr := term ("&" term)*
//   term := "cores" "(" int ["," int] ")" | "sametile" | "maxtiles" "(" int ")"
//         | "benefit" "(" number ")" | "exclusive"
//         | "shareable" "(" ("spatial"|"temporal"|"both") ")"
//         | "oversupply" "(" ("tolerate"|"reject") ")"
//         | "undersupply" "(" ("tolerate"|"reject") ")"
// Whitespace-insensitive, keywords case-sensitive, omitted terms take defaults,
// two terms of the same kind are a duplicate error. The result does not depend
// on term order.
inline ParseResult parse_constraints(std::string_view text) {
    detail::ConstraintCursor cur{text};
    ConstraintSet cs;

    enum TermKind { KCores, KPlacement, KBenefit, KSharing, KOversupply, KUndersupply, KCount };
    bool seen[KCount] = {};

    auto fail = [](std::size_t pos, std::string msg) -> ParseResult {
        return ParseDiagnostic{pos, std::move(msg)};
    };

    auto read_word = [&]() -> std::string_view {
        cur.skip_ws();
        std::size_t start = cur.pos;
        while (cur.pos < cur.text.size() && detail::is_word_char(cur.text[cur.pos])) {
            ++cur.pos;
        }
        return cur.text.substr(start, cur.pos - start);
    };

    // Reads a non-negative integer; returns -1 on failure.
    auto read_int = [&]() -> long long {
        cur.skip_ws();
        std::size_t start = cur.pos;
        while (cur.pos < cur.text.size() && cur.text[cur.pos] >= '0' && cur.text[cur.pos] <= '9') {
            ++cur.pos;
        }
        if (cur.pos == start) {
            return -1;
        }
        long long value = 0;
        auto [ptr, ec] = std::from_chars(cur.text.data() + start, cur.text.data() + cur.pos, value);
        if (ec != std::errc{} || ptr != cur.text.data() + cur.pos) {
            return -1;
        }
        return value;
    };

    auto read_number = [&](double& out) -> bool {
        cur.skip_ws();
        std::size_t start = cur.pos;
        bool seen_exp = false;
        while (cur.pos < cur.text.size()) {
            char c = cur.text[cur.pos];
            if ((c >= '0' && c <= '9') || c == '.') {
                ++cur.pos;
            } else if ((c == 'e' || c == 'E') && !seen_exp && cur.pos > start) {
                seen_exp = true;
                ++cur.pos;
                if (cur.pos < cur.text.size() &&
                    (cur.text[cur.pos] == '+' || cur.text[cur.pos] == '-')) {
                    ++cur.pos;
                }
            } else {
                break;
            }
        }
        if (cur.pos == start) {
            return false;
        }
        auto [ptr, ec] = std::from_chars(cur.text.data() + start, cur.text.data() + cur.pos, out);
        return ec == std::errc{} && ptr == cur.text.data() + cur.pos;
    };

    bool first = true;
    while (true) {
        if (first && cur.at_end()) {
            return fail(cur.pos, "expected a constraint term");
        }
        first = false;

        cur.skip_ws();
        const std::size_t term_pos = cur.pos;
        std::string_view word = read_word();
        if (word.empty()) {
            return fail(term_pos, "expected a constraint keyword");
        }

        auto mark = [&](TermKind k) -> bool {
            if (seen[k]) {
                return false;
            }
            seen[k] = true;
            return true;
        };

        if (word == "cores") {
            if (!mark(KCores)) return fail(term_pos, "duplicate cores term");
            if (!cur.accept('(')) return fail(cur.pos, "expected '(' after cores");
            cur.skip_ws();
            std::size_t num_pos = cur.pos;
            long long lo = read_int();
            if (lo < 0) return fail(num_pos, "expected core count");
            if (lo == 0) return fail(num_pos, "core count must be >= 1");
            long long hi = lo;
            if (cur.accept(',')) {
                cur.skip_ws();
                num_pos = cur.pos;
                hi = read_int();
                if (hi < 0) return fail(num_pos, "expected core count after ','");
                if (hi < lo) return fail(num_pos, "cores: max is smaller than min");
            }
            if (!cur.accept(')')) return fail(cur.pos, "expected ')'");
            cs.cores_min = static_cast<int>(lo);
            cs.cores_max = static_cast<int>(hi);
        } else if (word == "sametile") {
            if (!mark(KPlacement)) return fail(term_pos, "duplicate placement term");
            cs.placement = Placement{PlacementKind::SameTile, 0};
        } else if (word == "maxtiles") {
            if (!mark(KPlacement)) return fail(term_pos, "duplicate placement term");
            if (!cur.accept('(')) return fail(cur.pos, "expected '(' after maxtiles");
            cur.skip_ws();
            std::size_t num_pos = cur.pos;
            long long k = read_int();
            if (k < 0) return fail(num_pos, "expected tile count");
            if (k == 0) return fail(num_pos, "maxtiles requires k >= 1");
            if (!cur.accept(')')) return fail(cur.pos, "expected ')'");
            cs.placement = Placement{PlacementKind::MaxTiles, static_cast<int>(k)};
        } else if (word == "benefit") {
            if (!mark(KBenefit)) return fail(term_pos, "duplicate benefit term");
            if (!cur.accept('(')) return fail(cur.pos, "expected '(' after benefit");
            cur.skip_ws();
            std::size_t num_pos = cur.pos;
            double value = 0.0;
            if (!read_number(value)) return fail(num_pos, "expected a number");
            if (!(value >= 0.0)) return fail(num_pos, "benefit must be non-negative");
            if (!cur.accept(')')) return fail(cur.pos, "expected ')'");
            cs.benefit = value;
        } else if (word == "exclusive") {
            if (!mark(KSharing)) return fail(term_pos, "duplicate sharing term");
            cs.sharing = Sharing::Exclusive;
        } else if (word == "shareable") {
            if (!mark(KSharing)) return fail(term_pos, "duplicate sharing term");
            if (!cur.accept('(')) return fail(cur.pos, "expected '(' after shareable");
            cur.skip_ws();
            std::size_t scope_pos = cur.pos;
            std::string_view scope = read_word();
            if (scope == "spatial") {
                cs.sharing = Sharing::SpatialShareable;
            } else if (scope == "temporal") {
                cs.sharing = Sharing::TemporalShareable;
            } else if (scope == "both") {
                cs.sharing = Sharing::BothShareable;
            } else {
                return fail(scope_pos, "expected spatial, temporal or both");
            }
            if (!cur.accept(')')) return fail(cur.pos, "expected ')'");
        } else if (word == "oversupply" || word == "undersupply") {
            const bool over = word == "oversupply";
            if (!mark(over ? KOversupply : KUndersupply)) {
                return fail(term_pos, std::string("duplicate ") + std::string(word) + " term");
            }
            if (!cur.accept('(')) return fail(cur.pos, "expected '('");
            cur.skip_ws();
            std::size_t mode_pos = cur.pos;
            std::string_view mode = read_word();
            SupplyPolicy policy;
            if (mode == "tolerate") {
                policy = SupplyPolicy::Tolerate;
            } else if (mode == "reject") {
                policy = SupplyPolicy::Reject;
            } else {
                return fail(mode_pos, "expected tolerate or reject");
            }
            if (!cur.accept(')')) return fail(cur.pos, "expected ')'");
            (over ? cs.oversupply : cs.undersupply) = policy;
        } else {
            return fail(term_pos, "unknown constraint keyword '" + std::string(word) + "'");
        }

        if (cur.at_end()) {
            break;
        }
        if (!cur.accept('&')) {
            return fail(cur.pos, "expected '&' between terms");
        }
    }

    return cs;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) {
        return "0";
    }
    return std::string(buf, ptr);
}

}  // namespace detail

// Deterministic printer; term order cores, placement, benefit, sharing,
// oversupply, undersupply; default terms elided (cores always printed).
// parse_constraints(canonical(cs)) == cs for every valid cs.
inline std::string canonical(const ConstraintSet& cs) {
    require_valid(cs);
    std::string out = "cores(" + std::to_string(cs.cores_min);
    if (cs.cores_max != cs.cores_min) {
        out += "," + std::to_string(cs.cores_max);
    }
    out += ")";
    switch (cs.placement.kind) {
        case PlacementKind::AnyTile: break;
        case PlacementKind::SameTile: out += " & sametile"; break;
        case PlacementKind::MaxTiles:
            out += " & maxtiles(" + std::to_string(cs.placement.max_tiles) + ")";
            break;
    }
    if (cs.benefit != 0.0) {
        out += " & benefit(" + detail::format_double(cs.benefit) + ")";
    }
    switch (cs.sharing) {
        case Sharing::Exclusive: break;
        case Sharing::SpatialShareable: out += " & shareable(spatial)"; break;
        case Sharing::TemporalShareable: out += " & shareable(temporal)"; break;
        case Sharing::BothShareable: out += " & shareable(both)"; break;
    }
    if (cs.oversupply == SupplyPolicy::Tolerate) {
        out += " & oversupply(tolerate)";
    }
    if (cs.undersupply == SupplyPolicy::Tolerate) {
        out += " & undersupply(tolerate)";
    }
    return out;
}

// True iff an empty machine of this shape could ever satisfy cs. Ignores
// current occupancy and masking.
inline bool static_feasible(const ConstraintSet& cs, const Machine& m) {
    require_valid(cs);
    const int cap = cs.placement.tile_cap(m.tile_count());
    return cs.cores_min <= cap * m.cores_per_tile();
}

}  // namespace invasim
