#pragma once

#include <functional>
#include <string>
#include <vector>

#include "texstat/gradcheck.hpp"

namespace texstat {

// One named difference-quotient check; run() executes it from scratch.
struct GradCase {
    std::string module;
    std::string name;
    std::function<GradCheckReport()> run;
};

// The bucket names accepted below (plus "all").
std::vector<std::string> gradcheck_modules();

// Deterministic 64-bit checks covering every differentiable primitive and
// the composite blocks.  module selects a bucket or "all".
std::vector<GradCase> gradcheck_cases(const std::string& module);

}  // namespace texstat
