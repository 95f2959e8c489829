#ifndef XAD_GRADCHECK_HPP
#define XAD_GRADCHECK_HPP

#include <functional>
#include <vector>

#include "xad/tape.hpp"

namespace xad {

// Central-difference verification harness. The closure must be a
// deterministic scalar-valued function of the given inputs; it is re-run
// on fresh tapes for every perturbed coordinate, so the analytic gradient
// and the numeric one never share an evaluation path.
//
// Returns max over coordinates of
//   |analytic - central_difference| / max(|analytic|, |cd|, 1e-8).
using ScalarFn = std::function<int(TapeD&, const std::vector<int>&)>;

double grad_check(const ScalarFn& fn, const std::vector<TensorD>& point, double epsilon);

}  // namespace xad

#endif
