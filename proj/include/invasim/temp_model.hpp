#pragma once

#include <vector>

#include "invasim/topology.hpp"

namespace invasim {

// Abstract linear heat model with mask/unmask hysteresis. A core executing
// during a tick interval gains heat_rate * tick, an idle one loses
// cool_rate * tick (floored at zero). Crossing t_high from below masks the
// core; a masked core unmasks once it has cooled to t_low or below.
struct TempModel {
    double heat_rate = 1.0;
    double cool_rate = 2.0;
    double t_high = 100.0;
    double t_low = 50.0;
    Time tick = 1;
};

inline void require_valid(const TempModel& m) {
    if (!(m.t_low < m.t_high)) {
        throw std::invalid_argument("temp model: t_low must be below t_high");
    }
    if (m.heat_rate < 0.0 || m.cool_rate < 0.0) {
        throw std::invalid_argument("temp model: rates must be non-negative");
    }
    if (m.tick < 1) {
        throw std::invalid_argument("temp model: tick must be >= 1");
    }
}

struct TempStepResult {
    std::vector<CoreId> mask;    // cores that crossed t_high, ascending
    std::vector<CoreId> unmask;  // masked cores that reached t_low, ascending
};

// One tick update over all cores. `busy[core_index]` says whether the core
// executed at any point during the elapsed tick interval. Mask/unmask flags
// themselves are applied by the caller when it processes the returned events.
inline TempStepResult temp_step(Machine& machine, const TempModel& model,
                                const std::vector<char>& busy) {
    require_valid(model);
    if (static_cast<int>(busy.size()) != machine.total_cores()) {
        throw std::invalid_argument("temp_step: busy vector size mismatch");
    }
    TempStepResult result;
    for (Tile& tile : machine.tiles) {
        for (Core& core : tile.cores) {
            const double before = core.temperature;
            if (busy[machine.core_index(core.id)]) {
                core.temperature = before + model.heat_rate * static_cast<double>(model.tick);
            } else {
                core.temperature =
                    std::max(0.0, before - model.cool_rate * static_cast<double>(model.tick));
            }
            if (!core.masked && before < model.t_high && core.temperature >= model.t_high) {
                result.mask.push_back(core.id);
            } else if (core.masked && core.temperature <= model.t_low) {
                result.unmask.push_back(core.id);
            }
        }
    }
    return result;
}

}  // namespace invasim
