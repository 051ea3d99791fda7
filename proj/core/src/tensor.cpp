#include "uvid/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace uvid {

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

Tensor::Tensor(Shape s, float fill) : shape_(s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
        throw std::invalid_argument("Tensor: negative extent in shape " + s.str());
    }
    data_.assign(static_cast<std::size_t>(s.numel()), fill);
}

Tensor Tensor::from_data(Shape s, std::vector<float> values) {
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
        throw std::invalid_argument("Tensor::from_data: " + std::to_string(values.size()) +
                                    " values for shape " + s.str());
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = std::move(values);
    return t;
}

float& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(index(n, c, h, w))];
}

float Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(index(n, c, h, w))];
}

void Tensor::ensure_grad() {
    if (grad_.size() != data_.size()) {
        grad_.assign(data_.size(), 0.0f);
    }
}

void Tensor::zero_grad() {
    if (!grad_.empty()) {
        std::fill(grad_.begin(), grad_.end(), 0.0f);
    }
}

void Tensor::accumulate_grad(const Tensor& g) {
    if (g.shape() != shape_) {
        throw std::invalid_argument("accumulate_grad: gradient shape " + g.shape().str() +
                                    " does not match value shape " + shape_.str());
    }
    ensure_grad();
    const float* src = g.data();
    for (std::size_t i = 0; i < grad_.size(); ++i) {
        grad_[i] += src[i];
    }
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void ensure_finite(const Tensor& t, const std::string& context) {
    const float* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(context + ": non-finite value at flat index " +
                                     std::to_string(i) + " of shape " + t.shape().str());
        }
    }
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("elementwise_mul: shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    }
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        po[i] = pa[i] * pb[i];
    }
    return out;
}

void elementwise_mul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out,
                              Tensor& grad_a, Tensor& grad_b) {
    if (grad_out.shape() != a.shape() || a.shape() != b.shape()) {
        throw std::invalid_argument("elementwise_mul_backward: shape mismatch");
    }
    grad_a = Tensor(a.shape());
    grad_b = Tensor(b.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    const float* pg = grad_out.data();
    float* ga = grad_a.data();
    float* gb = grad_b.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        ga[i] = pg[i] * pb[i];
        gb[i] = pg[i] * pa[i];
    }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
        throw std::invalid_argument("concat_channels: N/H/W mismatch " + sa.str() + " vs " +
                                    sb.str());
    }
    Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::int64_t plane = sa.h * sa.w;
    for (std::int64_t n = 0; n < sa.n; ++n) {
        float* dst = out.data() + n * (sa.c + sb.c) * plane;
        const float* pa = a.data() + n * sa.c * plane;
        const float* pb = b.data() + n * sb.c * plane;
        std::copy(pa, pa + sa.c * plane, dst);
        std::copy(pb, pb + sb.c * plane, dst + sa.c * plane);
    }
    return out;
}

void concat_channels_backward(const Tensor& grad_out, std::int64_t c_a,
                              Tensor& grad_a, Tensor& grad_b) {
    const Shape& s = grad_out.shape();
    if (c_a < 0 || c_a > s.c) {
        throw std::invalid_argument("concat_channels_backward: bad split point");
    }
    grad_a = slice_channels(grad_out, 0, c_a);
    grad_b = slice_channels(grad_out, c_a, s.c);
}

Tensor slice_channels(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    const Shape& s = x.shape();
    if (c0 < 0 || c1 > s.c || c0 >= c1) {
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + s.str());
    }
    Tensor out(Shape{s.n, c1 - c0, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        const float* src = x.data() + (n * s.c + c0) * plane;
        float* dst = out.data() + n * (c1 - c0) * plane;
        std::copy(src, src + (c1 - c0) * plane, dst);
    }
    return out;
}

}  // namespace uvid
