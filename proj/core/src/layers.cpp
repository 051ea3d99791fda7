#include "uvid/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace uvid {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    // b > 0, a may be negative
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

}  // namespace

void ParamRegistry::add(std::string name, Tensor* value, std::vector<std::int64_t> dims,
                        bool learnable) {
    for (const auto& e : entries_) {
        if (e.name == name) {
            throw std::invalid_argument("ParamRegistry: duplicate parameter name " + name);
        }
    }
    entries_.push_back(ParamEntry{std::move(name), value, std::move(dims), learnable});
}

std::int64_t ParamRegistry::learnable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) {
        if (e.learnable) n += e.value->numel();
    }
    return n;
}

std::int64_t ParamRegistry::total_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value->numel();
    return n;
}

// ---------------------------------------------------------------------------
// Conv2D
// ---------------------------------------------------------------------------

Conv2D::Conv2D(std::int64_t in_c, std::int64_t out_c, std::int64_t kh, std::int64_t kw,
               std::int64_t sh, std::int64_t sw, Padding pad)
    : in_c_(in_c), out_c_(out_c), kh_(kh), kw_(kw), sh_(sh), sw_(sw), pad_(pad),
      weights_(Shape{out_c, in_c, kh, kw}), bias_(Shape{1, out_c, 1, 1}) {
    if (in_c < 1 || out_c < 1 || kh < 1 || kw < 1 || sh < 1 || sw < 1) {
        throw std::invalid_argument("Conv2D: non-positive configuration value");
    }
}

void Conv2D::pad_amounts(std::int64_t in, std::int64_t k, std::int64_t s,
                         std::int64_t& out, std::int64_t& pad_begin) const {
    if (pad_ == Padding::kSame) {
        out = ceil_div(in, s);
        const std::int64_t pad_total = std::max<std::int64_t>((out - 1) * s + k - in, 0);
        pad_begin = pad_total / 2;
    } else {
        if (in < k) {
            throw std::invalid_argument("Conv2D: input extent " + std::to_string(in) +
                                        " smaller than kernel " + std::to_string(k));
        }
        out = (in - k) / s + 1;
        pad_begin = 0;
    }
    if (out < 1) {
        throw std::invalid_argument("Conv2D: zero-sized output");
    }
}

Shape Conv2D::output_shape(const Shape& in) const {
    if (in.c != in_c_) {
        throw std::invalid_argument("Conv2D: input has " + std::to_string(in.c) +
                                    " channels, layer expects " + std::to_string(in_c_));
    }
    Shape out{in.n, out_c_, 0, 0};
    std::int64_t pt, pl;
    pad_amounts(in.h, kh_, sh_, out.h, pt);
    pad_amounts(in.w, kw_, sw_, out.w, pl);
    return out;
}

Tensor Conv2D::forward(const Tensor& x, bool) {
    const Shape& s = x.shape();
    const Shape os = output_shape(s);
    std::int64_t pad_t, pad_l;
    std::int64_t tmp;
    pad_amounts(s.h, kh_, sh_, tmp, pad_t);
    pad_amounts(s.w, kw_, sw_, tmp, pad_l);

    input_ = x;
    Tensor out(os);

    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            float* oplane = out.data() + (n * out_c_ + oc) * os.h * os.w;
            const float b = bias_.data()[oc];
            std::fill(oplane, oplane + os.h * os.w, b);
        }
    }
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            float* oplane = out.data() + (n * out_c_ + oc) * os.h * os.w;
            for (std::int64_t ic = 0; ic < in_c_; ++ic) {
                const float* iplane = x.data() + (n * in_c_ + ic) * s.h * s.w;
                const float* wk = weights_.data() + (oc * in_c_ + ic) * kh_ * kw_;
                for (std::int64_t r = 0; r < kh_; ++r) {
                    const std::int64_t oh_lo = std::max<std::int64_t>(0, ceil_div(pad_t - r, sh_));
                    const std::int64_t oh_hi =
                        std::min(os.h - 1, (s.h - 1 + pad_t - r) / sh_);
                    for (std::int64_t q = 0; q < kw_; ++q) {
                        const float wv = wk[r * kw_ + q];
                        if (wv == 0.0f) continue;
                        const std::int64_t ow_lo =
                            std::max<std::int64_t>(0, ceil_div(pad_l - q, sw_));
                        const std::int64_t ow_hi =
                            std::min(os.w - 1, (s.w - 1 + pad_l - q) / sw_);
                        for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                            const std::int64_t ih = oh * sh_ - pad_t + r;
                            const float* irow = iplane + ih * s.w;
                            float* orow = oplane + oh * os.w;
                            for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                orow[ow] += wv * irow[ow * sw_ - pad_l + q];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor Conv2D::backward(const Tensor& grad_out) {
    const Shape& s = input_.shape();
    const Shape os = grad_out.shape();
    std::int64_t pad_t, pad_l, tmp;
    pad_amounts(s.h, kh_, sh_, tmp, pad_t);
    pad_amounts(s.w, kw_, sw_, tmp, pad_l);

    weights_.ensure_grad();
    bias_.ensure_grad();
    Tensor grad_in(s);

    // bias gradient
    for (std::int64_t oc = 0; oc < out_c_; ++oc) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < os.n; ++n) {
            const float* g = grad_out.data() + (n * out_c_ + oc) * os.h * os.w;
            for (std::int64_t i = 0; i < os.h * os.w; ++i) acc += g[i];
        }
        bias_.grad()[oc] += static_cast<float>(acc);
    }

    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            const float* gplane = grad_out.data() + (n * out_c_ + oc) * os.h * os.w;
            for (std::int64_t ic = 0; ic < in_c_; ++ic) {
                const float* iplane = input_.data() + (n * in_c_ + ic) * s.h * s.w;
                float* giplane = grad_in.data() + (n * in_c_ + ic) * s.h * s.w;
                const float* wk = weights_.data() + (oc * in_c_ + ic) * kh_ * kw_;
                float* gwk = weights_.grad() + (oc * in_c_ + ic) * kh_ * kw_;
                for (std::int64_t r = 0; r < kh_; ++r) {
                    const std::int64_t oh_lo = std::max<std::int64_t>(0, ceil_div(pad_t - r, sh_));
                    const std::int64_t oh_hi =
                        std::min(os.h - 1, (s.h - 1 + pad_t - r) / sh_);
                    for (std::int64_t q = 0; q < kw_; ++q) {
                        const std::int64_t ow_lo =
                            std::max<std::int64_t>(0, ceil_div(pad_l - q, sw_));
                        const std::int64_t ow_hi =
                            std::min(os.w - 1, (s.w - 1 + pad_l - q) / sw_);
                        const float wv = wk[r * kw_ + q];
                        double wacc = 0.0;
                        for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                            const std::int64_t ih = oh * sh_ - pad_t + r;
                            const float* irow = iplane + ih * s.w;
                            float* girow = giplane + ih * s.w;
                            const float* grow = gplane + oh * os.w;
                            for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                const std::int64_t iw = ow * sw_ - pad_l + q;
                                wacc += static_cast<double>(grow[ow]) * irow[iw];
                                girow[iw] += wv * grow[ow];
                            }
                        }
                        gwk[r * kw_ + q] += static_cast<float>(wacc);
                    }
                }
            }
        }
    }
    return grad_in;
}

void Conv2D::collect_params(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".weight", &weights_, {out_c_, in_c_, kh_, kw_});
    reg.add(prefix + ".bias", &bias_, {out_c_});
}

void Conv2D::init_params(std::mt19937& rng) {
    // Kaiming-uniform, fan-in
    const double fan_in = static_cast<double>(in_c_ * kh_ * kw_);
    const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (std::int64_t i = 0; i < weights_.numel(); ++i) weights_.data()[i] = dist(rng);
    std::fill(bias_.values().begin(), bias_.values().end(), 0.0f);
}

std::int64_t Conv2D::parameter_count() const {
    return kh_ * kw_ * in_c_ * out_c_ + out_c_;
}

std::int64_t Conv2D::flop_count(const Shape& in) const {
    const Shape os = output_shape(in);
    return os.h * os.w * os.n * out_c_ * (2 * kh_ * kw_ * in_c_ + 1);
}

std::string Conv2D::kind() const {
    return "conv" + std::to_string(kh_) + "x" + std::to_string(kw_);
}

// ---------------------------------------------------------------------------
// BatchNorm2D
// ---------------------------------------------------------------------------

BatchNorm2D::BatchNorm2D(std::int64_t channels, float momentum, float eps)
    : c_(channels), momentum_(momentum), eps_(eps),
      gamma_(Shape{1, channels, 1, 1}, 1.0f), beta_(Shape{1, channels, 1, 1}, 0.0f),
      running_mean_(Shape{1, channels, 1, 1}, 0.0f),
      running_var_(Shape{1, channels, 1, 1}, 1.0f) {}

Tensor BatchNorm2D::forward(const Tensor& x, bool training) {
    const Shape& s = x.shape();
    if (s.c != c_) {
        throw std::invalid_argument("BatchNorm2D: channel mismatch");
    }
    input_ = x;
    trained_forward_ = training;
    mean_.assign(static_cast<std::size_t>(c_), 0.0f);
    invstd_.assign(static_cast<std::size_t>(c_), 0.0f);

    const std::int64_t plane = s.h * s.w;
    const std::int64_t count = s.n * plane;
    Tensor out(s);

    for (std::int64_t c = 0; c < c_; ++c) {
        float mean, var;
        if (training) {
            double m = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                const float* p = x.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) m += p[i];
            }
            mean = static_cast<float>(m / count);
            double v = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                const float* p = x.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    v += d * d;
                }
            }
            var = static_cast<float>(v / count);  // biased
            running_mean_.data()[c] = (1.0f - momentum_) * running_mean_.data()[c] + momentum_ * mean;
            running_var_.data()[c] = (1.0f - momentum_) * running_var_.data()[c] + momentum_ * var;
        } else {
            mean = running_mean_.data()[c];
            var = running_var_.data()[c];
        }
        const float inv = 1.0f / std::sqrt(var + eps_);
        mean_[static_cast<std::size_t>(c)] = mean;
        invstd_[static_cast<std::size_t>(c)] = inv;
        const float g = gamma_.data()[c];
        const float b = beta_.data()[c];
        for (std::int64_t n = 0; n < s.n; ++n) {
            const float* p = x.data() + (n * c_ + c) * plane;
            float* o = out.data() + (n * c_ + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                o[i] = g * (p[i] - mean) * inv + b;
            }
        }
    }
    return out;
}

Tensor BatchNorm2D::backward(const Tensor& grad_out) {
    const Shape& s = input_.shape();
    const std::int64_t plane = s.h * s.w;
    const std::int64_t count = s.n * plane;
    gamma_.ensure_grad();
    beta_.ensure_grad();
    Tensor grad_in(s);

    for (std::int64_t c = 0; c < c_; ++c) {
        const float mean = mean_[static_cast<std::size_t>(c)];
        const float inv = invstd_[static_cast<std::size_t>(c)];
        const float g = gamma_.data()[c];
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t n = 0; n < s.n; ++n) {
            const float* p = input_.data() + (n * c_ + c) * plane;
            const float* go = grad_out.data() + (n * c_ + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const float xh = (p[i] - mean) * inv;
                sum_g += go[i];
                sum_gx += static_cast<double>(go[i]) * xh;
            }
        }
        gamma_.grad()[c] += static_cast<float>(sum_gx);
        beta_.grad()[c] += static_cast<float>(sum_g);

        if (trained_forward_) {
            const float mg = static_cast<float>(sum_g / count);
            const float mgx = static_cast<float>(sum_gx / count);
            for (std::int64_t n = 0; n < s.n; ++n) {
                const float* p = input_.data() + (n * c_ + c) * plane;
                const float* go = grad_out.data() + (n * c_ + c) * plane;
                float* gi = grad_in.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const float xh = (p[i] - mean) * inv;
                    gi[i] = g * inv * (go[i] - mg - xh * mgx);
                }
            }
        } else {
            for (std::int64_t n = 0; n < s.n; ++n) {
                const float* go = grad_out.data() + (n * c_ + c) * plane;
                float* gi = grad_in.data() + (n * c_ + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    gi[i] = g * inv * go[i];
                }
            }
        }
    }
    return grad_in;
}

void BatchNorm2D::collect_params(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".gamma", &gamma_, {c_});
    reg.add(prefix + ".beta", &beta_, {c_});
    reg.add(prefix + ".running_mean", &running_mean_, {c_}, /*learnable=*/false);
    reg.add(prefix + ".running_var", &running_var_, {c_}, /*learnable=*/false);
}

void BatchNorm2D::init_params(std::mt19937&) {
    std::fill(gamma_.values().begin(), gamma_.values().end(), 1.0f);
    std::fill(beta_.values().begin(), beta_.values().end(), 0.0f);
    std::fill(running_mean_.values().begin(), running_mean_.values().end(), 0.0f);
    std::fill(running_var_.values().begin(), running_var_.values().end(), 1.0f);
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool) {
    in_shape_ = x.shape();
    mask_.assign(static_cast<std::size_t>(x.numel()), 0);
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const float v = x.data()[i];
        if (v > 0.0f) {
            out.data()[i] = v;
            mask_[static_cast<std::size_t>(i)] = 1;
        }
    }
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor grad_in(in_shape_);
    for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
        grad_in.data()[i] = mask_[static_cast<std::size_t>(i)] ? grad_out.data()[i] : 0.0f;
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// MaxPool2D
// ---------------------------------------------------------------------------

MaxPool2D::MaxPool2D(std::int64_t kh, std::int64_t kw, std::int64_t sh, std::int64_t sw,
                     Padding pad)
    : kh_(kh), kw_(kw), sh_(sh), sw_(sw), pad_(pad) {}

Shape MaxPool2D::output_shape(const Shape& in) const {
    Shape out{in.n, in.c, 0, 0};
    if (pad_ == Padding::kSame) {
        out.h = ceil_div(in.h, sh_);
        out.w = ceil_div(in.w, sw_);
    } else {
        if (in.h < kh_ || in.w < kw_) {
            throw std::invalid_argument("MaxPool2D: kernel larger than input " + in.str());
        }
        out.h = (in.h - kh_) / sh_ + 1;
        out.w = (in.w - kw_) / sw_ + 1;
    }
    return out;
}

Tensor MaxPool2D::forward(const Tensor& x, bool) {
    const Shape& s = x.shape();
    const Shape os = output_shape(s);
    in_shape_ = s;
    argmax_.assign(static_cast<std::size_t>(os.numel()), 0);
    Tensor out(os);

    std::int64_t pad_t = 0, pad_l = 0;
    if (pad_ == Padding::kSame) {
        pad_t = std::max<std::int64_t>((os.h - 1) * sh_ + kh_ - s.h, 0) / 2;
        pad_l = std::max<std::int64_t>((os.w - 1) * sw_ + kw_ - s.w, 0) / 2;
    }

    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const float* plane = x.data() + (n * s.c + c) * s.h * s.w;
            for (std::int64_t oh = 0; oh < os.h; ++oh) {
                for (std::int64_t ow = 0; ow < os.w; ++ow, ++oi) {
                    const std::int64_t h0 = std::max<std::int64_t>(oh * sh_ - pad_t, 0);
                    const std::int64_t w0 = std::max<std::int64_t>(ow * sw_ - pad_l, 0);
                    const std::int64_t h1 = std::min(oh * sh_ - pad_t + kh_, s.h);
                    const std::int64_t w1 = std::min(ow * sw_ - pad_l + kw_, s.w);
                    float best = -std::numeric_limits<float>::infinity();
                    std::int64_t best_idx = h0 * s.w + w0;
                    for (std::int64_t ih = h0; ih < h1; ++ih) {
                        for (std::int64_t iw = w0; iw < w1; ++iw) {
                            const float v = plane[ih * s.w + iw];
                            if (v > best) {  // first occurrence wins on ties
                                best = v;
                                best_idx = ih * s.w + iw;
                            }
                        }
                    }
                    out.data()[oi] = best;
                    argmax_[static_cast<std::size_t>(oi)] =
                        (n * s.c + c) * s.h * s.w + best_idx;
                }
            }
        }
    }
    return out;
}

Tensor MaxPool2D::backward(const Tensor& grad_out) {
    Tensor grad_in(in_shape_);
    for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
        grad_in.data()[argmax_[static_cast<std::size_t>(i)]] += grad_out.data()[i];
    }
    return grad_in;
}

std::int64_t MaxPool2D::flop_count(const Shape& in) const {
    return (kh_ * kw_ - 1) * output_shape(in).numel();
}

std::string MaxPool2D::kind() const {
    return "maxpool" + std::to_string(kh_) + "x" + std::to_string(kw_);
}

// ---------------------------------------------------------------------------
// Upsample2x
// ---------------------------------------------------------------------------

Tensor Upsample2x::forward(const Tensor& x, bool) {
    const Shape& s = x.shape();
    in_shape_ = s;
    Tensor out(output_shape(s));
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const float* ip = x.data() + (n * s.c + c) * s.h * s.w;
            float* op = out.data() + (n * s.c + c) * (s.h * 2) * (s.w * 2);
            for (std::int64_t h = 0; h < s.h; ++h) {
                for (std::int64_t w = 0; w < s.w; ++w) {
                    const float v = ip[h * s.w + w];
                    float* o = op + (2 * h) * (2 * s.w) + 2 * w;
                    o[0] = v;
                    o[1] = v;
                    o[2 * s.w] = v;
                    o[2 * s.w + 1] = v;
                }
            }
        }
    }
    return out;
}

Tensor Upsample2x::backward(const Tensor& grad_out) {
    const Shape& s = in_shape_;
    Tensor grad_in(s);
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            float* gi = grad_in.data() + (n * s.c + c) * s.h * s.w;
            const float* go = grad_out.data() + (n * s.c + c) * (s.h * 2) * (s.w * 2);
            for (std::int64_t h = 0; h < s.h; ++h) {
                for (std::int64_t w = 0; w < s.w; ++w) {
                    const float* g = go + (2 * h) * (2 * s.w) + 2 * w;
                    gi[h * s.w + w] = g[0] + g[1] + g[2 * s.w] + g[2 * s.w + 1];
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// SoftmaxChannels
// ---------------------------------------------------------------------------

Tensor SoftmaxChannels::forward(const Tensor& x, bool) {
    const Shape& s = x.shape();
    if (s.c < 2) {
        throw std::invalid_argument("SoftmaxChannels: needs >= 2 channels");
    }
    ensure_finite(x, "SoftmaxChannels input");
    Tensor out(s);
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < plane; ++i) {
            float mx = -std::numeric_limits<float>::infinity();
            for (std::int64_t c = 0; c < s.c; ++c) {
                mx = std::max(mx, x.data()[(n * s.c + c) * plane + i]);
            }
            float denom = 0.0f;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const float e = std::exp(x.data()[(n * s.c + c) * plane + i] - mx);
                out.data()[(n * s.c + c) * plane + i] = e;
                denom += e;
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
                out.data()[(n * s.c + c) * plane + i] /= denom;
            }
        }
    }
    probs_ = out;
    return out;
}

Tensor SoftmaxChannels::backward(const Tensor& grad_out) {
    const Shape& s = probs_.shape();
    Tensor grad_in(s);
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < plane; ++i) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t idx = (n * s.c + c) * plane + i;
                dot += static_cast<double>(grad_out.data()[idx]) * probs_.data()[idx];
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t idx = (n * s.c + c) * plane + i;
                grad_in.data()[idx] =
                    probs_.data()[idx] * (grad_out.data()[idx] - static_cast<float>(dot));
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// BottleneckBlock
// ---------------------------------------------------------------------------

BottleneckBlock::BottleneckBlock(std::int64_t in_c, std::int64_t f1, std::int64_t f2,
                                 std::int64_t f3, std::int64_t stride)
    : in_c_(in_c), f3_(f3), stride_(stride),
      conv1_(in_c, f1, 1, 1, 1, 1, Padding::kValid),
      conv2_(f1, f2, 3, 3, stride, stride, Padding::kSame),
      conv3_(f2, f3, 1, 1, 1, 1, Padding::kValid),
      bn1_(f1), bn2_(f2), bn3_(f3) {
    if (stride != 1 || in_c != f3) {
        proj_conv_ = std::make_unique<Conv2D>(in_c, f3, 1, 1, stride, stride, Padding::kValid);
        proj_bn_ = std::make_unique<BatchNorm2D>(f3);
    }
}

Shape BottleneckBlock::output_shape(const Shape& in) const {
    return conv3_.output_shape(bn2_.output_shape(conv2_.output_shape(conv1_.output_shape(in))));
}

Tensor BottleneckBlock::forward(const Tensor& x, bool training) {
    Tensor m = relu1_.forward(bn1_.forward(conv1_.forward(x, training), training), training);
    m = relu2_.forward(bn2_.forward(conv2_.forward(m, training), training), training);
    m = bn3_.forward(conv3_.forward(m, training), training);
    Tensor sc = proj_conv_ ? proj_bn_->forward(proj_conv_->forward(x, training), training) : x;
    if (sc.shape() != m.shape()) {
        throw std::runtime_error("BottleneckBlock: addend shape mismatch " + m.shape().str() +
                                 " vs " + sc.shape().str() + " (misconfigured projection)");
    }
    main_out_ = m;
    shortcut_out_ = sc;
    Tensor sum(m.shape());
    for (std::int64_t i = 0; i < m.numel(); ++i) {
        sum.data()[i] = m.data()[i] + sc.data()[i];
    }
    return relu_out_.forward(sum, training);
}

Tensor BottleneckBlock::backward(const Tensor& grad_out) {
    Tensor g = relu_out_.backward(grad_out);
    // main path
    Tensor gm = bn3_.backward(g);
    gm = conv3_.backward(gm);
    gm = relu2_.backward(gm);
    gm = bn2_.backward(gm);
    gm = conv2_.backward(gm);
    gm = relu1_.backward(gm);
    gm = bn1_.backward(gm);
    gm = conv1_.backward(gm);
    // shortcut path
    if (proj_conv_) {
        Tensor gs = proj_bn_->backward(g);
        gs = proj_conv_->backward(gs);
        for (std::int64_t i = 0; i < gm.numel(); ++i) gm.data()[i] += gs.data()[i];
    } else {
        for (std::int64_t i = 0; i < gm.numel(); ++i) gm.data()[i] += g.data()[i];
    }
    return gm;
}

void BottleneckBlock::collect_params(const std::string& prefix, ParamRegistry& reg) {
    conv1_.collect_params(prefix + ".conv1", reg);
    bn1_.collect_params(prefix + ".bn1", reg);
    conv2_.collect_params(prefix + ".conv2", reg);
    bn2_.collect_params(prefix + ".bn2", reg);
    conv3_.collect_params(prefix + ".conv3", reg);
    bn3_.collect_params(prefix + ".bn3", reg);
    if (proj_conv_) {
        proj_conv_->collect_params(prefix + ".proj_conv", reg);
        proj_bn_->collect_params(prefix + ".proj_bn", reg);
    }
}

void BottleneckBlock::init_params(std::mt19937& rng) {
    conv1_.init_params(rng);
    bn1_.init_params(rng);
    conv2_.init_params(rng);
    bn2_.init_params(rng);
    conv3_.init_params(rng);
    bn3_.init_params(rng);
    if (proj_conv_) {
        proj_conv_->init_params(rng);
        proj_bn_->init_params(rng);
    }
}

std::int64_t BottleneckBlock::flop_count(const Shape& in) const {
    const Shape s1 = conv1_.output_shape(in);
    const Shape s2 = conv2_.output_shape(s1);
    const Shape s3 = conv3_.output_shape(s2);
    std::int64_t fl = conv1_.flop_count(in) + bn1_.flop_count(s1) + s1.numel();
    fl += conv2_.flop_count(s1) + bn2_.flop_count(s2) + s2.numel();
    fl += conv3_.flop_count(s2) + bn3_.flop_count(s3);
    if (proj_conv_) {
        fl += proj_conv_->flop_count(in) + proj_bn_->flop_count(s3);
    }
    fl += s3.numel();  // residual add
    fl += s3.numel();  // output ReLU
    return fl;
}

std::string BottleneckBlock::kind() const {
    return proj_conv_ ? "bottleneck(proj)" : "bottleneck";
}

// ---------------------------------------------------------------------------
// double-precision reference forwards (gradient checker only)
// ---------------------------------------------------------------------------

TensorD Conv2D::forward_ref(const TensorD& x, bool) const {
    const Shape& s = x.shape;
    const Shape os = output_shape(s);
    std::int64_t pad_t, pad_l, tmp;
    pad_amounts(s.h, kh_, sh_, tmp, pad_t);
    pad_amounts(s.w, kw_, sw_, tmp, pad_l);
    TensorD out(os);
    for (std::int64_t n = 0; n < os.n; ++n) {
        for (std::int64_t oc = 0; oc < out_c_; ++oc) {
            for (std::int64_t oh = 0; oh < os.h; ++oh) {
                for (std::int64_t ow = 0; ow < os.w; ++ow) {
                    double acc = static_cast<double>(bias_.data()[oc]);
                    for (std::int64_t ic = 0; ic < in_c_; ++ic) {
                        for (std::int64_t r = 0; r < kh_; ++r) {
                            const std::int64_t ih = oh * sh_ - pad_t + r;
                            if (ih < 0 || ih >= s.h) continue;
                            for (std::int64_t q = 0; q < kw_; ++q) {
                                const std::int64_t iw = ow * sw_ - pad_l + q;
                                if (iw < 0 || iw >= s.w) continue;
                                acc += static_cast<double>(
                                           weights_.data()[((oc * in_c_ + ic) * kh_ + r) * kw_ + q]) *
                                       x.data[static_cast<std::size_t>(
                                           ((n * in_c_ + ic) * s.h + ih) * s.w + iw)];
                            }
                        }
                    }
                    out.data[static_cast<std::size_t>(((n * out_c_ + oc) * os.h + oh) * os.w + ow)] =
                        acc;
                }
            }
        }
    }
    return out;
}

TensorD BatchNorm2D::forward_ref(const TensorD& x, bool training) const {
    const Shape& s = x.shape;
    const std::int64_t plane = s.h * s.w;
    const std::int64_t count = s.n * plane;
    TensorD out(s);
    for (std::int64_t c = 0; c < c_; ++c) {
        double mean, var;
        if (training) {
            double m = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                for (std::int64_t i = 0; i < plane; ++i) {
                    m += x.data[static_cast<std::size_t>((n * c_ + c) * plane + i)];
                }
            }
            mean = m / count;
            double v = 0.0;
            for (std::int64_t n = 0; n < s.n; ++n) {
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d =
                        x.data[static_cast<std::size_t>((n * c_ + c) * plane + i)] - mean;
                    v += d * d;
                }
            }
            var = v / count;
        } else {
            mean = static_cast<double>(running_mean_.data()[c]);
            var = static_cast<double>(running_var_.data()[c]);
        }
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps_));
        const double g = static_cast<double>(gamma_.data()[c]);
        const double b = static_cast<double>(beta_.data()[c]);
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t i = 0; i < plane; ++i) {
                const auto idx = static_cast<std::size_t>((n * c_ + c) * plane + i);
                out.data[idx] = g * (x.data[idx] - mean) * inv + b;
            }
        }
    }
    return out;
}

TensorD ReLU::forward_ref(const TensorD& x, bool) const {
    TensorD out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    }
    return out;
}

TensorD MaxPool2D::forward_ref(const TensorD& x, bool) const {
    const Shape& s = x.shape;
    const Shape os = output_shape(s);
    TensorD out(os);
    std::int64_t pad_t = 0, pad_l = 0;
    if (pad_ == Padding::kSame) {
        pad_t = std::max<std::int64_t>((os.h - 1) * sh_ + kh_ - s.h, 0) / 2;
        pad_l = std::max<std::int64_t>((os.w - 1) * sw_ + kw_ - s.w, 0) / 2;
    }
    std::size_t oi = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const double* plane = x.data.data() + (n * s.c + c) * s.h * s.w;
            for (std::int64_t oh = 0; oh < os.h; ++oh) {
                for (std::int64_t ow = 0; ow < os.w; ++ow, ++oi) {
                    const std::int64_t h0 = std::max<std::int64_t>(oh * sh_ - pad_t, 0);
                    const std::int64_t w0 = std::max<std::int64_t>(ow * sw_ - pad_l, 0);
                    const std::int64_t h1 = std::min(oh * sh_ - pad_t + kh_, s.h);
                    const std::int64_t w1 = std::min(ow * sw_ - pad_l + kw_, s.w);
                    double best = -std::numeric_limits<double>::infinity();
                    for (std::int64_t ih = h0; ih < h1; ++ih) {
                        for (std::int64_t iw = w0; iw < w1; ++iw) {
                            const double v = plane[ih * s.w + iw];
                            if (v > best) best = v;
                        }
                    }
                    out.data[oi] = best;
                }
            }
        }
    }
    return out;
}

TensorD Upsample2x::forward_ref(const TensorD& x, bool) const {
    const Shape& s = x.shape;
    TensorD out(Shape{s.n, s.c, s.h * 2, s.w * 2});
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const double* ip = x.data.data() + (n * s.c + c) * s.h * s.w;
            double* op = out.data.data() + (n * s.c + c) * (s.h * 2) * (s.w * 2);
            for (std::int64_t h = 0; h < s.h; ++h) {
                for (std::int64_t w = 0; w < s.w; ++w) {
                    const double v = ip[h * s.w + w];
                    double* o = op + (2 * h) * (2 * s.w) + 2 * w;
                    o[0] = v;
                    o[1] = v;
                    o[2 * s.w] = v;
                    o[2 * s.w + 1] = v;
                }
            }
        }
    }
    return out;
}

TensorD SoftmaxChannels::forward_ref(const TensorD& x, bool) const {
    const Shape& s = x.shape;
    TensorD out(s);
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t c = 0; c < s.c; ++c) {
                mx = std::max(mx, x.data[static_cast<std::size_t>((n * s.c + c) * plane + i)]);
            }
            double denom = 0.0;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const auto idx = static_cast<std::size_t>((n * s.c + c) * plane + i);
                out.data[idx] = std::exp(x.data[idx] - mx);
                denom += out.data[idx];
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
                out.data[static_cast<std::size_t>((n * s.c + c) * plane + i)] /= denom;
            }
        }
    }
    return out;
}

TensorD BottleneckBlock::forward_ref(const TensorD& x, bool training) const {
    TensorD m = relu1_.forward_ref(bn1_.forward_ref(conv1_.forward_ref(x, training), training),
                                   training);
    m = relu2_.forward_ref(bn2_.forward_ref(conv2_.forward_ref(m, training), training), training);
    m = bn3_.forward_ref(conv3_.forward_ref(m, training), training);
    TensorD sc = proj_conv_
                     ? proj_bn_->forward_ref(proj_conv_->forward_ref(x, training), training)
                     : x;
    TensorD sum(m.shape);
    for (std::size_t i = 0; i < m.data.size(); ++i) sum.data[i] = m.data[i] + sc.data[i];
    return relu_out_.forward_ref(sum, training);
}

}  // namespace uvid
