#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ipcal/dynamics.hpp"
#include "ipcal/vec2.hpp"

namespace ipcal {

/// One calibration window: reference data z on a uniform grid, the initial
/// state taken from it, and per-agent metadata. Traffic agents are ordered
/// so that index i+1 leads i.
struct SequenceSample {
    std::string source;
    long window_start = 0; // global grid node index of the first node
    Trajectory ref;
    std::vector<double> initial_state;
    std::vector<Vec2> destinations; // crowd only
    int direction = 1;              // traffic: −1 when positions were mirrored
    std::size_t order_violations = 0;

    std::size_t agents() const noexcept { return ref.layout.agents; }
    const std::vector<double>& times() const noexcept { return ref.times; }
    const std::vector<std::string>& agent_ids() const noexcept { return ref.agent_ids; }
};

} // namespace ipcal
