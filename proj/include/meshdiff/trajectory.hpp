#pragma once

#include <cstddef>
#include <vector>

namespace meshdiff {

/// Time-indexed node fields; states.size() == times.size() == n_t + 1.
struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;

    std::size_t num_steps() const { return states.empty() ? 0 : states.size() - 1; }
    const std::vector<double>& final_state() const { return states.back(); }
};

}  // namespace meshdiff
