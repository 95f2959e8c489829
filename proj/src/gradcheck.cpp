#include "xad/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace xad {

namespace {

double eval_at(const ScalarFn& fn, const std::vector<TensorD>& point) {
    TapeD tape;
    std::vector<int> ids;
    ids.reserve(point.size());
    for (const auto& t : point) ids.push_back(tape.leaf(t, false));
    int out = fn(tape, ids);
    const TensorD& v = tape.value(out);
    if (v.numel() != 1) throw std::runtime_error("grad_check: closure must be scalar-valued");
    return v[0];
}

}  // namespace

double grad_check(const ScalarFn& fn, const std::vector<TensorD>& point, double epsilon) {
    if (epsilon <= 0) throw std::runtime_error("grad_check: epsilon must be positive");

    // analytic pass
    TapeD tape;
    std::vector<int> ids;
    for (const auto& t : point) ids.push_back(tape.leaf(t, true));
    int out = fn(tape, ids);
    const TensorD& v = tape.value(out);
    if (v.numel() != 1) throw std::runtime_error("grad_check: closure must be scalar-valued");
    if (!std::isfinite(v[0])) throw std::runtime_error("grad_check: non-finite function value");
    std::vector<TensorD> analytic(point.size());
    if (tape.requires_grad(out)) {
        tape.backward(out);
        for (size_t i = 0; i < ids.size(); ++i) {
            const TensorD& g = tape.grad(ids[static_cast<size_t>(i)]);
            analytic[i] = g.data.empty() ? TensorD(point[i].shape) : g;
        }
    } else {
        // constant function: analytic gradient is identically zero
        for (size_t i = 0; i < point.size(); ++i) analytic[i] = TensorD(point[i].shape);
    }

    double worst = 0;
    std::vector<TensorD> probe = point;
    for (size_t i = 0; i < point.size(); ++i) {
        for (int64_t j = 0; j < point[i].numel(); ++j) {
            double orig = probe[i][j];
            probe[i][j] = orig + epsilon;
            double fp = eval_at(fn, probe);
            probe[i][j] = orig - epsilon;
            double fm = eval_at(fn, probe);
            probe[i][j] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite value during probing");
            double cd = (fp - fm) / (2.0 * epsilon);
            double an = analytic[i][j];
            double rel = std::fabs(an - cd) / std::max({std::fabs(an), std::fabs(cd), 1e-8});
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

}  // namespace xad
