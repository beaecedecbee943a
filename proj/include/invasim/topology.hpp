#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace invasim {

using Time = std::int64_t;
using AppId = std::uint32_t;
using ClaimId = std::uint32_t;  // 0 is reserved (wildcard tag / "no claim")
using IletId = std::uint32_t;

// (tile, core) address of one processing element.
struct CoreId {
    int tile = 0;
    int core = 0;
    auto operator<=>(const CoreId&) const = default;
};

inline std::string to_string(const CoreId& id) {
    return std::to_string(id.tile) + "." + std::to_string(id.core);
}

enum class TileOwner { Pool, Agent };

struct Core {
    CoreId id;
    // Claims holding this core, sorted ascending.
    // Empty = free, one holder = exclusively allocated, several = time-shared.
    std::vector<ClaimId> holders;
    bool masked = false;
    double temperature = 0.0;
    std::optional<Time> busy_until;

    bool free() const { return holders.empty(); }
    bool held_by(ClaimId c) const {
        return std::binary_search(holders.begin(), holders.end(), c);
    }
    void add_holder(ClaimId c) {
        auto it = std::lower_bound(holders.begin(), holders.end(), c);
        if (it != holders.end() && *it == c) {
            throw std::logic_error("core " + invasim::to_string(id) +
                                   " already held by claim " + std::to_string(c));
        }
        holders.insert(it, c);
    }
    void remove_holder(ClaimId c) {
        auto it = std::lower_bound(holders.begin(), holders.end(), c);
        if (it == holders.end() || *it != c) {
            throw std::logic_error("core " + invasim::to_string(id) +
                                   " not held by claim " + std::to_string(c));
        }
        holders.erase(it);
    }
};

struct Tile {
    int id = 0;
    std::vector<Core> cores;
    TileOwner owner = TileOwner::Pool;
};

struct TopologyConfig {
    int tiles = 1;
    int cores_per_tile = 4;
    Time noc_hop_latency = 1;
};

struct Machine {
    std::vector<Tile> tiles;
    Time noc_hop_latency = 1;

    int tile_count() const { return static_cast<int>(tiles.size()); }
    int cores_per_tile() const {
        return tiles.empty() ? 0 : static_cast<int>(tiles.front().cores.size());
    }
    int total_cores() const { return tile_count() * cores_per_tile(); }
    bool valid_tile(int t) const { return t >= 0 && t < tile_count(); }
    bool valid_core(CoreId id) const {
        return valid_tile(id.tile) && id.core >= 0 && id.core < cores_per_tile();
    }
    Core& core(CoreId id) { return tiles[id.tile].cores[id.core]; }
    const Core& core(CoreId id) const { return tiles[id.tile].cores[id.core]; }
    // Flat index, useful for per-core arrays.
    int core_index(CoreId id) const { return id.tile * cores_per_tile() + id.core; }
    CoreId core_id(int index) const {
        return CoreId{index / cores_per_tile(), index % cores_per_tile()};
    }
};

inline Machine build_machine(const TopologyConfig& config) {
    if (config.tiles < 1) {
        throw std::invalid_argument("topology: tile count must be >= 1");
    }
    if (config.cores_per_tile < 1) {
        throw std::invalid_argument("topology: cores per tile must be >= 1");
    }
    if (config.noc_hop_latency < 0) {
        throw std::invalid_argument("topology: noc hop latency must be >= 0");
    }
    Machine m;
    m.noc_hop_latency = config.noc_hop_latency;
    m.tiles.resize(config.tiles);
    for (int t = 0; t < config.tiles; ++t) {
        Tile& tile = m.tiles[t];
        tile.id = t;
        tile.owner = TileOwner::Pool;
        tile.cores.resize(config.cores_per_tile);
        for (int c = 0; c < config.cores_per_tile; ++c) {
            tile.cores[c].id = CoreId{t, c};
        }
    }
    return m;
}

// Free, unmasked cores of a tile, ascending.
inline std::vector<CoreId> spare_cores(const Machine& m, int tile) {
    if (!m.valid_tile(tile)) {
        throw std::out_of_range("spare_cores: tile index " + std::to_string(tile) +
                                " out of range");
    }
    std::vector<CoreId> out;
    for (const Core& c : m.tiles[tile].cores) {
        if (c.free() && !c.masked) {
            out.push_back(c.id);
        }
    }
    return out;
}

// Tiles with all cores free, ascending.
inline std::vector<int> virgin_tiles(const Machine& m) {
    std::vector<int> out;
    for (const Tile& t : m.tiles) {
        bool virgin = true;
        for (const Core& c : t.cores) {
            if (!c.free()) {
                virgin = false;
                break;
            }
        }
        if (virgin) {
            out.push_back(t.id);
        }
    }
    return out;
}

inline void check_machine(const Machine& m) {
    if (m.tiles.empty()) {
        throw std::logic_error("machine: no tiles");
    }
    const int cpt = m.cores_per_tile();
    for (int t = 0; t < m.tile_count(); ++t) {
        const Tile& tile = m.tiles[t];
        if (tile.id != t) {
            throw std::logic_error("machine: tile id mismatch");
        }
        if (static_cast<int>(tile.cores.size()) != cpt) {
            throw std::logic_error("machine: tiles differ in core count");
        }
        for (int c = 0; c < cpt; ++c) {
            const Core& core = tile.cores[c];
            if (core.id != CoreId{t, c}) {
                throw std::logic_error("machine: core id mismatch");
            }
            if (core.temperature < 0.0) {
                throw std::logic_error("machine: negative temperature");
            }
            if (!std::is_sorted(core.holders.begin(), core.holders.end())) {
                throw std::logic_error("machine: unsorted holder list");
            }
            if (std::adjacent_find(core.holders.begin(), core.holders.end()) !=
                core.holders.end()) {
                throw std::logic_error("machine: duplicate holder");
            }
        }
    }
}

}  // namespace invasim
