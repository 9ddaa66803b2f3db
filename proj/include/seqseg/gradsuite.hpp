#pragma once

#include <string>
#include <vector>

#include "seqseg/gradcheck.hpp"

namespace seqseg {

// Finite-difference verification of every backward pass, grouped by
// module. Each entry is the max relative error across the requested
// number of seeds, with the tolerance the suite holds it to.
struct GradSuiteEntry {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_rel_error < tolerance; }
};

std::vector<GradSuiteEntry> gradcheck_tensor_ops(int seeds);
std::vector<GradSuiteEntry> gradcheck_losses(int seeds);
std::vector<GradSuiteEntry> gradcheck_pnet(int seeds);
std::vector<GradSuiteEntry> gradcheck_birnn(int seeds);

// module: one of all|tensor|pnet|birnn|losses.
std::vector<GradSuiteEntry> run_gradcheck(const std::string& module, int seeds);

}  // namespace seqseg
