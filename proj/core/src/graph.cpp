#include "uvid/graph.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace uvid {

void ArchConfig::validate() const {
    if (base_width < 1) throw std::invalid_argument("ArchConfig: base_width must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("ArchConfig: num_classes must be >= 2");
    const std::int64_t f = downsample_factor();
    if (input_h % f != 0 || input_w % f != 0) {
        throw std::invalid_argument("ArchConfig: input " + std::to_string(input_h) + "x" +
                                    std::to_string(input_w) + " not divisible by " +
                                    std::to_string(f));
    }
    if (one_by_one == OneByOneRule::kHalve && base_width % 2 != 0) {
        throw std::invalid_argument("ArchConfig: halve rule needs an even base_width");
    }
}

// ---------------------------------------------------------------------------
// ModelGraph
// ---------------------------------------------------------------------------

int ModelGraph::add_input(NodeKind which, std::string name, Shape s) {
    if (which != NodeKind::kInputA && which != NodeKind::kInputB) {
        throw std::invalid_argument("add_input: not an input kind");
    }
    if (which == NodeKind::kInputB) has_input_b_ = true;
    input_shape_ = s;
    GraphNode n;
    n.name = std::move(name);
    n.kind = which;
    n.out_shape = s;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int ModelGraph::add_layer(std::string name, std::unique_ptr<Layer> layer, int in) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("add_layer: bad input node for " + name);
    }
    GraphNode n;
    n.name = std::move(name);
    n.kind = NodeKind::kLayer;
    n.out_shape = layer->output_shape(nodes_[static_cast<std::size_t>(in)].out_shape);
    n.layer = std::move(layer);
    n.in0 = in;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int ModelGraph::add_merge(NodeKind kind, std::string name, int a, int b) {
    const Shape& sa = nodes_[static_cast<std::size_t>(a)].out_shape;
    const Shape& sb = nodes_[static_cast<std::size_t>(b)].out_shape;
    GraphNode n;
    n.name = std::move(name);
    n.kind = kind;
    n.in0 = a;
    n.in1 = b;
    if (kind == NodeKind::kMul) {
        if (sa != sb) {
            throw std::invalid_argument("merge " + n.name + ": shape mismatch " + sa.str() +
                                        " vs " + sb.str());
        }
        n.out_shape = sa;
    } else if (kind == NodeKind::kConcat) {
        if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
            throw std::invalid_argument("merge " + n.name + ": N/H/W mismatch " + sa.str() +
                                        " vs " + sb.str());
        }
        n.out_shape = Shape{sa.n, sa.c + sb.c, sa.h, sa.w};
    } else {
        throw std::invalid_argument("add_merge: not a merge kind");
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void ModelGraph::mark_output(int softmax_node, int logits_node) {
    output_node_ = softmax_node;
    logits_node_ = logits_node;
}

void ModelGraph::finalize() {
    if (finalized_) throw std::runtime_error("ModelGraph::finalize called twice");
    for (auto& n : nodes_) {
        if (n.layer) n.layer->collect_params(n.name, registry_);
    }
    finalized_ = true;
}

void ModelGraph::init_params(std::uint64_t seed) {
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
    for (auto& n : nodes_) {
        if (n.layer) n.layer->init_params(rng);
    }
}

Tensor ModelGraph::forward(const Tensor& a, const Tensor& b, bool training) {
    activations_.assign(nodes_.size(), Tensor());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        GraphNode& n = nodes_[i];
        switch (n.kind) {
            case NodeKind::kInputA:
                activations_[i] = a;
                break;
            case NodeKind::kInputB:
                if (!has_input_b_) throw std::runtime_error("graph has no input B");
                activations_[i] = b;
                break;
            case NodeKind::kLayer:
                activations_[i] = n.layer->forward(
                    activations_[static_cast<std::size_t>(n.in0)], training && n.trainable);
                break;
            case NodeKind::kMul:
                activations_[i] =
                    elementwise_mul(activations_[static_cast<std::size_t>(n.in0)],
                                    activations_[static_cast<std::size_t>(n.in1)]);
                break;
            case NodeKind::kConcat:
                activations_[i] =
                    concat_channels(activations_[static_cast<std::size_t>(n.in0)],
                                    activations_[static_cast<std::size_t>(n.in1)]);
                break;
        }
    }
    return activations_[static_cast<std::size_t>(output_node_)];
}

Tensor ModelGraph::forward(const Tensor& a, bool training) {
    if (has_input_b_) throw std::runtime_error("two-branch graph needs both inputs");
    return forward(a, a, training);
}

void ModelGraph::run_backward(int start_node, const Tensor& seed_grad) {
    if (activations_.size() != nodes_.size()) {
        throw std::runtime_error("backward without a preceding forward");
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_set_.assign(nodes_.size(), 0);
    grads_[static_cast<std::size_t>(start_node)] = seed_grad;
    grad_set_[static_cast<std::size_t>(start_node)] = 1;

    auto accumulate = [&](int target, Tensor&& g) {
        auto t = static_cast<std::size_t>(target);
        if (!grad_set_[t]) {
            grads_[t] = std::move(g);
            grad_set_[t] = 1;
        } else {
            float* dst = grads_[t].data();
            const float* src = g.data();
            for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
        }
    };

    for (int i = start_node; i >= 0; --i) {
        const auto idx = static_cast<std::size_t>(i);
        if (!grad_set_[idx]) continue;
        GraphNode& n = nodes_[idx];
        switch (n.kind) {
            case NodeKind::kInputA:
            case NodeKind::kInputB:
                break;
            case NodeKind::kLayer:
                accumulate(n.in0, n.layer->backward(grads_[idx]));
                break;
            case NodeKind::kMul: {
                Tensor ga, gb;
                elementwise_mul_backward(activations_[static_cast<std::size_t>(n.in0)],
                                         activations_[static_cast<std::size_t>(n.in1)],
                                         grads_[idx], ga, gb);
                accumulate(n.in0, std::move(ga));
                accumulate(n.in1, std::move(gb));
                break;
            }
            case NodeKind::kConcat: {
                Tensor ga, gb;
                concat_channels_backward(
                    grads_[idx], activations_[static_cast<std::size_t>(n.in0)].shape().c, ga, gb);
                accumulate(n.in0, std::move(ga));
                accumulate(n.in1, std::move(gb));
                break;
            }
        }
    }
}

void ModelGraph::backward(const Tensor& grad_output) {
    run_backward(output_node_, grad_output);
}

void ModelGraph::backward_from_logits(const Tensor& grad_logits) {
    run_backward(logits_node_, grad_logits);
}

void ModelGraph::zero_grads() {
    for (auto& e : registry_.entries()) e.value->zero_grad();
}

void ModelGraph::freeze_all_but_head() {
    for (auto& n : nodes_) {
        if (n.name.rfind("head", 0) != 0) n.trainable = false;
    }
}

std::vector<std::string> ModelGraph::frozen_param_names() const {
    std::vector<std::string> out;
    for (const auto& e : registry_.entries()) {
        if (!e.learnable) continue;
        if (e.name.rfind("head", 0) != 0) out.push_back(e.name);
    }
    return out;
}

std::vector<Shape> ModelGraph::infer_shapes(std::int64_t h, std::int64_t w) const {
    std::vector<Shape> shapes(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const GraphNode& n = nodes_[i];
        switch (n.kind) {
            case NodeKind::kInputA:
            case NodeKind::kInputB:
                shapes[i] = Shape{n.out_shape.n, n.out_shape.c, h, w};
                break;
            case NodeKind::kLayer:
                shapes[i] = n.layer->output_shape(shapes[static_cast<std::size_t>(n.in0)]);
                break;
            case NodeKind::kMul:
                shapes[i] = shapes[static_cast<std::size_t>(n.in0)];
                break;
            case NodeKind::kConcat: {
                Shape s = shapes[static_cast<std::size_t>(n.in0)];
                s.c += shapes[static_cast<std::size_t>(n.in1)].c;
                shapes[i] = s;
                break;
            }
        }
    }
    return shapes;
}

std::int64_t ModelGraph::count_flops(std::int64_t h, std::int64_t w) const {
    const std::vector<Shape> shapes = infer_shapes(h, w);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const GraphNode& n = nodes_[i];
        if (n.kind == NodeKind::kLayer) {
            total += n.layer->flop_count(shapes[static_cast<std::size_t>(n.in0)]);
        } else if (n.kind == NodeKind::kMul) {
            total += shapes[i].numel();  // 1 FLOP per output element
        }
        // inputs and concat are free
    }
    return total;
}

std::int64_t ModelGraph::count_flops() const {
    return count_flops(input_shape_.h, input_shape_.w);
}

std::string ModelGraph::ledger() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-28s %-18s %-20s %14s %14s %16s\n", "layer", "type",
                  "output", "params", "params+stats", "flops");
    os << line;
    os << std::string(114, '-') << "\n";
    std::int64_t learn_total = 0, full_total = 0, flop_total = 0;
    const std::vector<Shape> shapes = infer_shapes(input_shape_.h, input_shape_.w);

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const GraphNode& n = nodes_[i];
        std::int64_t learn = 0, full = 0, fl = 0;
        std::string type;
        switch (n.kind) {
            case NodeKind::kInputA:
            case NodeKind::kInputB:
                type = "input";
                break;
            case NodeKind::kMul:
                type = "mul";
                fl = shapes[i].numel();
                break;
            case NodeKind::kConcat:
                type = "concat";
                break;
            case NodeKind::kLayer: {
                type = n.layer->kind();
                const std::string prefix = n.name + ".";
                for (const auto& e : registry_.entries()) {
                    if (e.name.rfind(prefix, 0) != 0) continue;
                    full += e.value->numel();
                    if (e.learnable) learn += e.value->numel();
                }
                fl = n.layer->flop_count(shapes[static_cast<std::size_t>(n.in0)]);
                break;
            }
        }
        learn_total += learn;
        full_total += full;
        flop_total += fl;
        std::snprintf(line, sizeof(line), "%-28s %-18s %-20s %14lld %14lld %16lld\n",
                      n.name.c_str(), type.c_str(), shapes[i].str().c_str(),
                      static_cast<long long>(learn), static_cast<long long>(full),
                      static_cast<long long>(fl));
        os << line;
    }
    os << std::string(114, '-') << "\n";
    std::snprintf(line, sizeof(line), "%-28s %-18s %-20s %14lld %14lld %16lld\n", "total", "",
                  "", static_cast<long long>(learn_total), static_cast<long long>(full_total),
                  static_cast<long long>(flop_total));
    os << line;
    return os.str();
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<Conv2D> conv3x3(std::int64_t in, std::int64_t out) {
    return std::make_unique<Conv2D>(in, out, 3, 3, 1, 1, Padding::kSame);
}

std::unique_ptr<Conv2D> conv1x1(std::int64_t in, std::int64_t out) {
    return std::make_unique<Conv2D>(in, out, 1, 1, 1, 1, Padding::kValid);
}

// conv + optional BN + ReLU; returns the ReLU node id
int conv_bn_relu(ModelGraph& g, const std::string& prefix, int in, std::int64_t in_c,
                 std::int64_t out_c, bool bn, std::int64_t k = 3) {
    int id = g.add_layer(prefix + ".conv",
                         std::make_unique<Conv2D>(in_c, out_c, k, k, 1, 1,
                                                  k == 1 ? Padding::kValid : Padding::kSame),
                         in);
    if (bn) id = g.add_layer(prefix + ".bn", std::make_unique<BatchNorm2D>(out_c), id);
    return g.add_layer(prefix + ".relu", std::make_unique<ReLU>(), id);
}

std::int64_t reduced_width(OneByOneRule rule, std::int64_t w) {
    switch (rule) {
        case OneByOneRule::kKeep: return w;
        case OneByOneRule::kHalve: return w / 2;
        case OneByOneRule::kSqueeze: return 1;
    }
    return w;
}

struct BranchOut {
    int node;             // bottleneck activation (UNet) or stage-4 output (ResNet)
    std::vector<int> skips;  // decoder-order skips (widest first), lower branch only
};

BranchOut build_unet_branch(ModelGraph& g, const ArchConfig& cfg, const std::string& prefix,
                            int input, bool upper) {
    BranchOut out;
    std::int64_t cin = 3;
    int id = input;
    for (int b = 0; b < 4; ++b) {
        const std::int64_t w = cfg.base_width << b;
        const std::string p = prefix + ".b" + std::to_string(b + 1);
        id = conv_bn_relu(g, p + ".c1", id, cin, w, cfg.branch_batchnorm);
        id = conv_bn_relu(g, p + ".c2", id, w, w, cfg.branch_batchnorm);
        if (!upper) out.skips.push_back(id);  // pre-pool activation
        cin = w;
        if (upper) {
            const std::int64_t u = reduced_width(cfg.one_by_one, w);
            id = g.add_layer(p + ".reduce", conv1x1(w, u), id);
            cin = u;
        }
        id = g.add_layer(p + ".pool", std::make_unique<MaxPool2D>(2, 2, 2, 2), id);
    }
    // bottleneck: one 3x3 conv at 16*base
    const std::string bp = prefix + ".bottleneck";
    int bid = g.add_layer(bp + ".conv", conv3x3(cin, cfg.base_width * 16), id);
    if (cfg.bottleneck_batchnorm) {
        bid = g.add_layer(bp + ".bn", std::make_unique<BatchNorm2D>(cfg.base_width * 16), bid);
    }
    out.node = g.add_layer(bp + ".relu", std::make_unique<ReLU>(), bid);
    std::reverse(out.skips.begin(), out.skips.end());  // widest (deepest) first
    return out;
}

BranchOut build_resnet_branch(ModelGraph& g, const ArchConfig& cfg, const std::string& prefix,
                              int input, bool lower) {
    BranchOut out;
    const std::int64_t b = cfg.base_width;
    int id = g.add_layer(prefix + ".stem.conv",
                         std::make_unique<Conv2D>(3, b, 7, 7, 2, 2, Padding::kSame), input);
    id = g.add_layer(prefix + ".stem.bn", std::make_unique<BatchNorm2D>(b), id);
    id = g.add_layer(prefix + ".stem.relu", std::make_unique<ReLU>(), id);
    const int stem_out = id;
    id = g.add_layer(prefix + ".stem.pool",
                     std::make_unique<MaxPool2D>(3, 3, 2, 2, Padding::kSame), id);

    struct StageSpec {
        int blocks;
        std::int64_t f1, f2, f3;
        std::int64_t stride;
    };
    // per-stage filter triples; the widest is 2x the middle width
    const StageSpec stages[4] = {{3, b, b, 2 * b, 1},
                                 {4, 2 * b, 2 * b, 4 * b, 2},
                                 {6, 4 * b, 4 * b, 8 * b, 2},
                                 {3, 8 * b, 8 * b, 16 * b, 2}};
    std::int64_t cin = b;
    std::vector<int> stage_out(4);
    for (int s = 0; s < 4; ++s) {
        for (int k = 0; k < stages[s].blocks; ++k) {
            const std::int64_t stride = (k == 0) ? stages[s].stride : 1;
            id = g.add_layer(prefix + ".s" + std::to_string(s + 1) + ".blk" + std::to_string(k + 1),
                             std::make_unique<BottleneckBlock>(cin, stages[s].f1, stages[s].f2,
                                                               stages[s].f3, stride),
                             id);
            cin = stages[s].f3;
        }
        stage_out[static_cast<std::size_t>(s)] = id;
    }
    out.node = id;
    if (lower) {
        // decoder-order skips: stage3 (8b), stage2 (4b), stage1 (2b), stem (b)
        out.skips = {stage_out[2], stage_out[1], stage_out[0], stem_out};
    }
    return out;
}

void build_decoder_and_head(ModelGraph& g, const ArchConfig& cfg, int id,
                            const std::vector<int>& skips, bool batchnorm, bool final_upsample) {
    std::int64_t din = g.nodes()[static_cast<std::size_t>(id)].out_shape.c;
    for (int d = 0; d < 4; ++d) {
        const std::int64_t w = cfg.base_width << (3 - d);
        const std::string p = "dec.b" + std::to_string(d + 1);
        id = g.add_layer(p + ".up", std::make_unique<Upsample2x>(), id);
        id = g.add_layer(p + ".proj",
                         std::make_unique<Conv2D>(din, w, 2, 2, 1, 1, Padding::kSame), id);
        std::int64_t merged;
        if (cfg.merge == Merge::kMultiplication) {
            id = g.add_merge(NodeKind::kMul, p + ".refine", id, skips[static_cast<std::size_t>(d)]);
            merged = w;
        } else {
            id = g.add_merge(NodeKind::kConcat, p + ".cat", id, skips[static_cast<std::size_t>(d)]);
            merged = 2 * w;
        }
        id = conv_bn_relu(g, p + ".c1", id, merged, w, batchnorm);
        id = conv_bn_relu(g, p + ".c2", id, w, w, batchnorm);
        din = w;
    }
    if (final_upsample) {
        id = g.add_layer("dec.final_up", std::make_unique<Upsample2x>(), id);
    }
    const int logits = g.add_layer("head.conv", conv1x1(cfg.base_width, cfg.num_classes), id);
    const int probs = g.add_layer("head.softmax", std::make_unique<SoftmaxChannels>(), logits);
    g.mark_output(probs, logits);
}

}  // namespace

ModelGraph build_uvidnet(const ArchConfig& cfg) {
    cfg.validate();
    ModelGraph g;
    const Shape in{1, 3, cfg.input_h, cfg.input_w};
    const int a = g.add_input(NodeKind::kInputA, "input_a", in);
    const int b = g.add_input(NodeKind::kInputB, "input_b", in);

    BranchOut up, lo;
    if (cfg.encoder == Encoder::kUNet) {
        up = build_unet_branch(g, cfg, "enc_up", a, /*upper=*/true);
        lo = build_unet_branch(g, cfg, "enc_lo", b, /*upper=*/false);
    } else {
        up = build_resnet_branch(g, cfg, "enc_up", a, /*lower=*/false);
        lo = build_resnet_branch(g, cfg, "enc_lo", b, /*lower=*/true);
    }
    const int cat = g.add_merge(NodeKind::kConcat, "bottleneck.cat", up.node, lo.node);
    build_decoder_and_head(g, cfg, cat, lo.skips, cfg.decoder_batchnorm,
                           /*final_upsample=*/cfg.encoder == Encoder::kResNet50);
    g.finalize();
    return g;
}

ModelGraph build_unet_baseline(const ArchConfig& cfg) {
    ArchConfig c = cfg;
    c.encoder = Encoder::kUNet;
    c.merge = Merge::kConcatenation;
    c.validate();
    ModelGraph g;
    const Shape in{1, 3, c.input_h, c.input_w};
    const int a = g.add_input(NodeKind::kInputA, "input", in);

    // classic U-Net: no batch normalization anywhere
    ArchConfig plain = c;
    plain.branch_batchnorm = false;
    plain.bottleneck_batchnorm = false;
    BranchOut lo = build_unet_branch(g, plain, "enc", a, /*upper=*/false);
    build_decoder_and_head(g, plain, lo.node, lo.skips, /*batchnorm=*/false,
                           /*final_upsample=*/false);
    g.finalize();
    return g;
}

CalibrationResult calibrate_unet_interpretation() {
    CalibrationResult res;
    std::ostringstream os;
    os << "calibration of under-specified choices against the published ledger\n";
    os << "reference config: U-Net encoder, base 64, 4 classes, 256x256 input\n\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %-10s %14s %14s %14s %14s  %s\n", "1x1-rule",
                  "bn-layout", "mult-total", "cat-total", "mult-learn", "cat-learn", "match");
    os << line;

    for (OneByOneRule rule :
         {OneByOneRule::kSqueeze, OneByOneRule::kHalve, OneByOneRule::kKeep}) {
        for (bool full_bn : {true, false}) {
            ArchConfig cfg;
            cfg.one_by_one = rule;
            cfg.bottleneck_batchnorm = full_bn;
            cfg.decoder_batchnorm = full_bn;
            cfg.merge = Merge::kMultiplication;
            ModelGraph m = build_uvidnet(cfg);
            cfg.merge = Merge::kConcatenation;
            ModelGraph c = build_uvidnet(cfg);

            CalibrationRow row;
            row.rule = rule;
            row.full_bn_layout = full_bn;
            row.mult_total = m.count_params_total();
            row.cat_total = c.count_params_total();
            row.mult_learnable = m.count_params();
            row.cat_learnable = c.count_params();
            row.exact = row.mult_total == kPublishedParamsMult &&
                        row.cat_total == kPublishedParamsCat;
            if (row.exact && !res.selected) res.selected = res.rows.size();
            const char* rn = rule == OneByOneRule::kSqueeze ? "squeeze"
                             : rule == OneByOneRule::kHalve ? "halve"
                                                            : "keep";
            std::snprintf(line, sizeof(line), "%-10s %-10s %14lld %14lld %14lld %14lld  %s\n",
                          rn, full_bn ? "full" : "enc-only",
                          static_cast<long long>(row.mult_total),
                          static_cast<long long>(row.cat_total),
                          static_cast<long long>(row.mult_learnable),
                          static_cast<long long>(row.cat_learnable),
                          row.exact ? "EXACT" : "-");
            os << line;
            res.rows.push_back(row);
        }
    }
    os << "\ntargets: mult-total " << kPublishedParamsMult << ", cat-total "
       << kPublishedParamsCat << " (totals include batchnorm moving statistics;\n"
       << "the learnable-only concatenation count equals the alternative published figure "
       << kPublishedParamsCatLearnable << ")\n";
    if (res.selected) {
        const auto& r = res.rows[*res.selected];
        os << "selected interpretation: 1x1-rule="
           << (r.rule == OneByOneRule::kSqueeze ? "squeeze"
               : r.rule == OneByOneRule::kHalve ? "halve"
                                                : "keep")
           << ", bn-layout=" << (r.full_bn_layout ? "full" : "enc-only") << " (exact match)\n";
    } else {
        os << "no exact match; defaults pinned to the closest row\n";
    }
    res.report = os.str();
    return res;
}

}  // namespace uvid
