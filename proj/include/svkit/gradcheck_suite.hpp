#pragma once

#include <iosfwd>
#include <vector>

#include "svkit/gradcheck.hpp"

namespace svkit::nn {

/// Double-precision finite-difference checks of every differentiable
/// operator, `n_seeds` random instances each. Prints one line per operator
/// (worst error across seeds) to `out`; returns the reports.
std::vector<GradCheckReport> run_gradcheck_suite(double tolerance, int n_seeds,
                                                 std::ostream& out);

bool suite_passed(const std::vector<GradCheckReport>& reports, double tolerance);

}  // namespace svkit::nn
