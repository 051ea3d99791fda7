#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "uvid/tensor.hpp"

namespace uvid {

/// Named parameter with the logical dims used by checkpoints. Storage is
/// always a 4-D Tensor; `dims` gives the serialized rank (e.g. {out} for a
/// conv bias, {out,in,kh,kw} for its weights).
struct ParamEntry {
    std::string name;
    Tensor* value = nullptr;
    std::vector<std::int64_t> dims;
    bool learnable = true;  // false for BatchNorm running statistics
};

class ParamRegistry {
  public:
    void add(std::string name, Tensor* value, std::vector<std::int64_t> dims,
             bool learnable = true);
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }

    std::int64_t learnable_count() const;
    /// Learnable parameters plus BatchNorm running statistics. This is the
    /// quantity Keras-style "total params" summaries report.
    std::int64_t total_count() const;

  private:
    std::vector<ParamEntry> entries_;
};

enum class Padding { kSame, kValid };

class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    /// Consumes the output gradient, accumulates parameter gradients, and
    /// returns the input gradient. Must follow the most recent forward().
    virtual Tensor backward(const Tensor& grad_out) = 0;
    /// Double-precision, state-free re-evaluation of the forward function of
    /// the current (single-precision) parameters; numeric reference for the
    /// gradient checker only.
    virtual TensorD forward_ref(const TensorD& x, bool training) const = 0;
    virtual void collect_params(const std::string&, ParamRegistry&) {}
    virtual void init_params(std::mt19937&) {}
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual std::int64_t flop_count(const Shape& in) const = 0;
    virtual std::string kind() const = 0;
};

class Conv2D final : public Layer {
  public:
    Conv2D(std::int64_t in_c, std::int64_t out_c, std::int64_t kh, std::int64_t kw,
           std::int64_t sh, std::int64_t sw, Padding pad);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    void collect_params(const std::string& prefix, ParamRegistry& reg) override;
    void init_params(std::mt19937& rng) override;
    Shape output_shape(const Shape& in) const override;
    std::int64_t flop_count(const Shape& in) const override;
    std::string kind() const override;

    std::int64_t parameter_count() const;

    Tensor& weights() { return weights_; }
    Tensor& bias() { return bias_; }
    std::int64_t in_channels() const { return in_c_; }
    std::int64_t out_channels() const { return out_c_; }

  private:
    void pad_amounts(std::int64_t in, std::int64_t k, std::int64_t s,
                     std::int64_t& out, std::int64_t& pad_begin) const;

    std::int64_t in_c_, out_c_, kh_, kw_, sh_, sw_;
    Padding pad_;
    Tensor weights_;  // (out, in, kh, kw)
    Tensor bias_;     // (1, out, 1, 1), serialized as {out}
    Tensor input_;    // cached by forward
};

class BatchNorm2D final : public Layer {
  public:
    explicit BatchNorm2D(std::int64_t channels, float momentum = 0.1f, float eps = 1e-5f);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    void collect_params(const std::string& prefix, ParamRegistry& reg) override;
    void init_params(std::mt19937& rng) override;
    Shape output_shape(const Shape& in) const override { return in; }
    std::int64_t flop_count(const Shape& in) const override { return 2 * in.numel(); }
    std::string kind() const override { return "batchnorm"; }

    std::int64_t channels() const { return c_; }
    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

  private:
    std::int64_t c_;
    float momentum_, eps_;
    Tensor gamma_, beta_, running_mean_, running_var_;  // each (1, c, 1, 1)
    // forward cache
    Tensor input_;
    std::vector<float> mean_, invstd_;
    bool trained_forward_ = false;
};

class ReLU final : public Layer {
  public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    Shape output_shape(const Shape& in) const override { return in; }
    std::int64_t flop_count(const Shape& in) const override { return in.numel(); }
    std::string kind() const override { return "relu"; }

  private:
    std::vector<std::uint8_t> mask_;
    Shape in_shape_{};
};

class MaxPool2D final : public Layer {
  public:
    MaxPool2D(std::int64_t kh, std::int64_t kw, std::int64_t sh, std::int64_t sw,
              Padding pad = Padding::kValid);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    Shape output_shape(const Shape& in) const override;
    std::int64_t flop_count(const Shape& in) const override;
    std::string kind() const override;

  private:
    std::int64_t kh_, kw_, sh_, sw_;
    Padding pad_;
    std::vector<std::int64_t> argmax_;  // flat input index per output element
    Shape in_shape_{};
};

/// Nearest-neighbour x2 upsampling; each value replicated into a 2x2 block.
class Upsample2x final : public Layer {
  public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    Shape output_shape(const Shape& in) const override {
        return Shape{in.n, in.c, in.h * 2, in.w * 2};
    }
    std::int64_t flop_count(const Shape&) const override { return 0; }
    std::string kind() const override { return "upsample2x"; }

  private:
    Shape in_shape_{};
};

/// Per-pixel softmax across the channel axis with max-subtraction.
class SoftmaxChannels final : public Layer {
  public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    Shape output_shape(const Shape& in) const override { return in; }
    std::int64_t flop_count(const Shape& in) const override { return 4 * in.numel(); }
    std::string kind() const override { return "softmax"; }

  private:
    Tensor probs_;
};

/// ResNet residual block: 1x1 -> 3x3 -> 1x1 convs, each with BN, ReLU after
/// the first two and after the residual add. Projection shortcut (1x1 conv +
/// BN) whenever the channel count or stride changes. The stride, when 2, sits
/// on the 3x3 conv.
class BottleneckBlock final : public Layer {
  public:
    BottleneckBlock(std::int64_t in_c, std::int64_t f1, std::int64_t f2, std::int64_t f3,
                    std::int64_t stride);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    TensorD forward_ref(const TensorD& x, bool training) const override;
    void collect_params(const std::string& prefix, ParamRegistry& reg) override;
    void init_params(std::mt19937& rng) override;
    Shape output_shape(const Shape& in) const override;
    std::int64_t flop_count(const Shape& in) const override;
    std::string kind() const override;

    bool has_projection() const { return proj_conv_ != nullptr; }

  private:
    std::int64_t in_c_, f3_, stride_;
    Conv2D conv1_, conv2_, conv3_;
    BatchNorm2D bn1_, bn2_, bn3_;
    ReLU relu1_, relu2_, relu_out_;
    std::unique_ptr<Conv2D> proj_conv_;
    std::unique_ptr<BatchNorm2D> proj_bn_;
    Tensor shortcut_out_, main_out_;
};

}  // namespace uvid
