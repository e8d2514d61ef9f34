#pragma once

#include <map>
#include <string>

#include "cotforge/trainer.hpp"

namespace cotforge {

struct GradCheckResult {
    double max_rel_err = 0;
    std::string worst_group;
    std::map<std::string, double> per_group;
    int coords_checked = 0;

    bool pass(double threshold) const { return max_rel_err < threshold; }
};

// Central finite differences against the analytic gradient on a small
// (<10k parameter) double-precision model. Coordinates are sampled among
// entries whose analytic gradient is non-negligible relative to the largest
// one, so the relative error is well defined. inject_sign_bug flips one
// gradient entry to prove the harness detects wrong gradients.
GradCheckResult gradcheck_objective(Objective objective, double fd_step = 1e-3, int coords = 200,
                                    std::uint64_t seed = 0, bool inject_sign_bug = false);

}  // namespace cotforge
