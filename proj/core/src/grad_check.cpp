#include "uvid/grad_check.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace uvid {

Tensor GradChecker::projection(const Shape& out_shape) const {
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed_));
    std::uniform_real_distribution<float> dist(0.25f, 1.75f);
    Tensor r(out_shape);
    for (std::int64_t i = 0; i < r.numel(); ++i) {
        r.data()[i] = dist(rng);
    }
    return r;
}

GradCheckReport GradChecker::check(const std::function<TensorD()>& forward,
                                   std::span<float> values,
                                   std::span<const float> analytic,
                                   double epsilon, double tolerance) const {
    if (epsilon <= 0.0) {
        throw std::invalid_argument("grad_check: epsilon must be positive");
    }
    if (values.size() != analytic.size()) {
        throw std::invalid_argument("grad_check: value/gradient size mismatch");
    }
    const Tensor r = projection(forward().shape);

    auto reduce = [&](const TensorD& out) {
        if (out.shape != r.shape()) {
            throw std::runtime_error("grad_check: forward output shape changed between calls");
        }
        double s = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            const double v = out.data[static_cast<std::size_t>(i)];
            if (!std::isfinite(v)) {
                throw std::runtime_error("grad_check: non-finite forward value at index " +
                                         std::to_string(i));
            }
            s += static_cast<double>(r.data()[i]) * v;
        }
        return s;
    };

    GradCheckReport rep;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float saved = values[i];
        values[i] = static_cast<float>(saved + epsilon);
        const double actual_plus = static_cast<double>(values[i]) - saved;
        const double lp = reduce(forward());
        values[i] = static_cast<float>(saved - epsilon);
        const double actual_minus = saved - static_cast<double>(values[i]);
        const double lm = reduce(forward());
        values[i] = saved;

        // the float perturbation may not be exactly epsilon; use the realized step
        const double numeric = (lp - lm) / (actual_plus + actual_minus);
        const double ga = static_cast<double>(analytic[i]);
        if (!std::isfinite(numeric) || !std::isfinite(ga)) {
            throw std::runtime_error("grad_check: non-finite gradient at index " +
                                     std::to_string(i));
        }
        const double denom = std::max({std::fabs(ga), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(ga - numeric) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = static_cast<std::int64_t>(i);
        }
    }
    rep.pass = rep.max_rel_err < tolerance;
    return rep;
}

}  // namespace uvid
