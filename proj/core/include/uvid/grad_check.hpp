#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "uvid/tensor.hpp"

namespace uvid {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t worst_index = -1;
    bool pass = false;
};

/// Central finite-difference check of an analytic gradient.
///
/// The operation under test is reduced to a scalar L = sum_i R[i] * out[i]
/// with fixed pseudo-random projection weights R (seeded), so permuted or
/// misrouted gradients cannot cancel. `forward` must be deterministic and
/// must read the current contents of `values`; `analytic` is the gradient of
/// L with respect to `values`, produced by the caller's backward pass with
/// output gradient R (obtained via `projection`).
///
/// The numeric side evaluates through the layers' double-precision reference
/// forward (Layer::forward_ref); the single-precision implementation path is
/// what produced `analytic`, so a divergence between the two paths shows up
/// as a failed check rather than hiding.
///
/// Relative error per coordinate: |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
class GradChecker {
  public:
    explicit GradChecker(std::uint64_t seed = 17) : seed_(seed) {}

    /// Projection weights R for an output of the given shape.
    Tensor projection(const Shape& out_shape) const;

    GradCheckReport check(const std::function<TensorD()>& forward,
                          std::span<float> values,
                          std::span<const float> analytic,
                          double epsilon, double tolerance) const;

  private:
    std::uint64_t seed_;
};

}  // namespace uvid
