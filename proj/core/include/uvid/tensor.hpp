#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uvid {

/// Extents of a dense 4-D tensor in (batch, channels, height, width) order.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense single-precision 4-D tensor, row-major N,C,H,W, with an optional
/// gradient buffer of identical shape.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f);

    static Tensor zeros(Shape s) { return Tensor(s, 0.0f); }
    static Tensor ones(Shape s) { return Tensor(s, 1.0f); }
    static Tensor from_data(Shape s, std::vector<float> values);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    bool has_grad() const { return !grad_.empty(); }
    void ensure_grad();
    void zero_grad();
    float* grad() { return grad_.data(); }
    const float* grad() const { return grad_.data(); }
    std::vector<float>& grad_values() { return grad_; }
    const std::vector<float>& grad_values() const { return grad_; }

    /// Accumulates g into the gradient buffer (allocating it on first use).
    void accumulate_grad(const Tensor& g);

    bool all_finite() const;

  private:
    Shape shape_{};
    std::vector<float> data_;
    std::vector<float> grad_;
};

/// Double-precision tensor used by the gradient checker's reference forward
/// path; layers compute in single precision everywhere else.
struct TensorD {
    Shape shape{};
    std::vector<double> data;

    TensorD() = default;
    explicit TensorD(Shape s, double fill = 0.0)
        : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {}
    static TensorD from(const Tensor& t) {
        TensorD d(t.shape());
        for (std::int64_t i = 0; i < t.numel(); ++i) d.data[static_cast<std::size_t>(i)] = t.data()[i];
        return d;
    }
    std::int64_t numel() const { return shape.numel(); }
};

/// Throws std::runtime_error naming `context` and the first offending index
/// if t contains a NaN or infinity.
void ensure_finite(const Tensor& t, const std::string& context);

/// out[i] = a[i] * b[i]. Shapes must match exactly.
Tensor elementwise_mul(const Tensor& a, const Tensor& b);

/// Gradients of elementwise_mul: d/da = grad_out*b, d/db = grad_out*a.
void elementwise_mul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out,
                              Tensor& grad_a, Tensor& grad_b);

/// Concatenates along the channel axis; a occupies channels [0, C_a).
/// N, H, W must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Splits a concat gradient back into the two input gradients.
void concat_channels_backward(const Tensor& grad_out, std::int64_t c_a,
                              Tensor& grad_a, Tensor& grad_b);

/// Channel slice [c0, c1), used to invert concat_channels.
Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1);

}  // namespace uvid
