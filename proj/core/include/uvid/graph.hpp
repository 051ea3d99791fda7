#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uvid/layers.hpp"
#include "uvid/tensor.hpp"

namespace uvid {

enum class Encoder { kUNet, kResNet50 };
enum class Merge { kMultiplication, kConcatenation };

/// Width of the 1x1 conv closing each upper-branch block.
/// kSqueeze (a single feature map) is the calibrated default: it is the only
/// choice that reproduces the published parameter ledger exactly.
enum class OneByOneRule { kKeep, kHalve, kSqueeze };

struct ArchConfig {
    Encoder encoder = Encoder::kUNet;
    Merge merge = Merge::kMultiplication;
    std::int64_t base_width = 64;
    std::int64_t num_classes = 4;
    std::int64_t input_h = 256;
    std::int64_t input_w = 256;
    OneByOneRule one_by_one = OneByOneRule::kSqueeze;
    /// BN on the two 3x3 convs of every encoder block.
    bool branch_batchnorm = true;
    /// BN after each branch bottleneck conv (calibrated: on).
    bool bottleneck_batchnorm = true;
    /// BN after the two 3x3 convs of every decoder block (calibrated: on).
    bool decoder_batchnorm = true;

    std::int64_t downsample_factor() const {
        return encoder == Encoder::kUNet ? 16 : 32;
    }
    void validate() const;
};

enum class NodeKind { kInputA, kInputB, kLayer, kMul, kConcat };

struct GraphNode {
    std::string name;
    NodeKind kind;
    std::unique_ptr<Layer> layer;  // kLayer only
    int in0 = -1;
    int in1 = -1;
    Shape out_shape{};      // at the configured input size
    bool trainable = true;  // false: params frozen and BN runs in inference mode
};

/// A DAG of layer nodes. Node ids are topologically ordered by construction;
/// forward walks ids ascending, backward descending. Two input ports for the
/// two-branch variants (frame A = upper/context branch, frame B = lower/
/// keyframe branch); the baseline uses port A alone.
class ModelGraph {
  public:
    int add_input(NodeKind which, std::string name, Shape s);
    int add_layer(std::string name, std::unique_ptr<Layer> layer, int in);
    int add_merge(NodeKind kind, std::string name, int a, int b);
    void mark_output(int softmax_node, int logits_node);
    void finalize();  // builds the parameter registry; call once after wiring

    int num_inputs() const { return has_input_b_ ? 2 : 1; }
    const std::vector<GraphNode>& nodes() const { return nodes_; }
    std::vector<GraphNode>& mutable_nodes() { return nodes_; }
    ParamRegistry& params() { return registry_; }
    const ParamRegistry& params() const { return registry_; }

    void init_params(std::uint64_t seed);

    Tensor forward(const Tensor& a, const Tensor& b, bool training);
    Tensor forward(const Tensor& a, bool training);

    /// Gradient of every learnable parameter is accumulated; call zero_grads
    /// between steps. Starts from the softmax output gradient.
    void backward(const Tensor& grad_output);
    /// Starts from the gradient w.r.t. pre-softmax logits (fused softmax+CE).
    void backward_from_logits(const Tensor& grad_logits);
    void zero_grads();

    /// Freezes every node except those whose name starts with "head";
    /// frozen BatchNorm runs in inference mode during training.
    void freeze_all_but_head();
    std::vector<std::string> frozen_param_names() const;

    std::int64_t count_params() const { return registry_.learnable_count(); }
    std::int64_t count_params_total() const { return registry_.total_count(); }
    /// FLOPs for one forward pass at the given input size (documented
    /// convention; see Conv2D/Layer flop_count implementations).
    std::int64_t count_flops(std::int64_t h, std::int64_t w) const;
    std::int64_t count_flops() const;

    const Shape& input_shape() const { return input_shape_; }
    std::int64_t num_classes() const { return nodes_[static_cast<std::size_t>(logits_node_)].out_shape.c; }

    /// Human-readable per-layer table: name, kind, output shape, learnable
    /// params, total params (incl. BN stats), FLOPs; plus a totals row.
    std::string ledger() const;

  private:
    void run_backward(int start_node, const Tensor& seed_grad);
    std::vector<Shape> infer_shapes(std::int64_t h, std::int64_t w) const;

    std::vector<GraphNode> nodes_;
    ParamRegistry registry_;
    std::vector<Tensor> activations_;
    std::vector<Tensor> grads_;
    std::vector<char> grad_set_;
    int output_node_ = -1;
    int logits_node_ = -1;
    bool has_input_b_ = false;
    bool finalized_ = false;
    Shape input_shape_{};
};

/// Two-branch UVid-Net (U-Net or ResNet-50 encoder) per the configuration.
ModelGraph build_uvidnet(const ArchConfig& cfg);

/// Single-branch classic U-Net baseline (concatenation skips, no batch
/// normalization), same head.
ModelGraph build_unet_baseline(const ArchConfig& cfg);

// ---------------------------------------------------------------------------
// Calibration of the under-specified architecture choices against the
// published parameter ledger.
// ---------------------------------------------------------------------------

struct CalibrationRow {
    OneByOneRule rule;
    bool full_bn_layout;  // BN on bottlenecks and decoder convs
    std::int64_t mult_total = 0;
    std::int64_t cat_total = 0;
    std::int64_t mult_learnable = 0;
    std::int64_t cat_learnable = 0;
    bool exact = false;
};

struct CalibrationResult {
    std::vector<CalibrationRow> rows;
    std::optional<std::size_t> selected;  // index of the exact-match row
    std::string report;                   // printable table + conclusion
};

/// Enumerates the calibration axes (1x1 width rule x BN layout) at the
/// reference configuration (base 64, 4 classes, 256x256) and selects the
/// combination whose totals match the published 23,745,032 / 26,878,472.
CalibrationResult calibrate_unet_interpretation();

constexpr std::int64_t kPublishedParamsMult = 23'745'032;
constexpr std::int64_t kPublishedParamsCat = 26'878'472;
constexpr std::int64_t kPublishedParamsCatLearnable = 26'862'856;
constexpr std::int64_t kPublishedParamsBaseline = 21'593'732;
constexpr std::int64_t kPublishedParamsResNetMult = 44'740'420;
constexpr std::int64_t kPublishedParamsResNetCatLearnable = 47'801'668;

}  // namespace uvid
