#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uvid/dataset.hpp"
#include "uvid/graph.hpp"
#include "uvid/tensor.hpp"

namespace uvid {

/// Batched per-pixel class targets matching a (N,C,H,W) probability tensor.
struct LabelBatch {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::int32_t> idx;  // n*h*w, row-major

    static LabelBatch from_maps(const std::vector<const LabelMap*>& maps);
};

struct CrossEntropyResult {
    float loss = 0.0f;
    Tensor grad_logits;        // (p - onehot) / pixel_count, fused softmax+CE
    std::int64_t clamped = 0;  // probabilities clamped at the 1e-12 log floor
};

/// loss = -mean over all pixels of ln p[target].
CrossEntropyResult cross_entropy_loss(const Tensor& probs, const LabelBatch& target);

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Adam with bias correction over a parameter registry; frozen names are
/// skipped entirely (their moments are never allocated).
class Adam {
  public:
    Adam(ParamRegistry& registry, AdamConfig cfg, const std::set<std::string>& frozen = {});

    /// Applies one update from the gradients stored in the parameter tensors.
    /// A non-finite gradient aborts before any parameter is touched.
    void step();

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    float lr() const { return cfg_.lr; }

    // checkpoint support
    std::vector<std::pair<std::string, const Tensor*>> state_tensors() const;
    void load_state(const std::map<std::string, std::vector<float>>& entries, std::int64_t t);

  private:
    AdamConfig cfg_;
    std::vector<ParamEntry*> targets_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoints: "UVNC" container, entries in registry order
// ---------------------------------------------------------------------------

struct CheckpointEntry {
    std::string name;
    std::vector<std::int64_t> dims;
    std::vector<float> values;
};

void save_checkpoint(const std::string& path, const ModelGraph& model,
                     const Adam* optimizer = nullptr,
                     const std::map<std::string, std::string>& metadata = {});

struct Checkpoint {
    std::uint32_t version = 0;
    std::vector<CheckpointEntry> entries;
    const CheckpointEntry* find(const std::string& name) const;
};

Checkpoint read_checkpoint(const std::string& path);

/// Copies every model parameter (and BN statistic) from the checkpoint;
/// names and shapes must match the registry exactly.
void load_checkpoint(ModelGraph& model, const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// transfer learning
// ---------------------------------------------------------------------------

struct TransferPlan {
    std::int64_t source_classes = 8;
    std::int64_t target_classes = 4;
    std::string head_prefix = "head";
    float lr = 1e-4f;  // "learning rate set to 0.0001"
    /// Source-class name -> target-class name (empty = dropped).
    std::vector<std::pair<std::string, std::string>> class_remap;

    static TransferPlan cityscapes_to_uavid();
};

/// Loads all non-head parameters from an N-class checkpoint into an M-class
/// model, freezes them (BN included, which then runs in inference mode), and
/// reinitializes the head. Returns the frozen parameter names.
std::vector<std::string> apply_transfer(ModelGraph& model, const Checkpoint& ckpt,
                                        const TransferPlan& plan, std::uint64_t seed);

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainSample {
    Tensor input_a;  // (1,3,H,W)
    Tensor input_b;
    LabelMap label;
};

struct TrainConfig {
    std::int64_t epochs = 1;
    std::int64_t batch_size = 2;
    float lr = 1e-4f;
    std::uint64_t seed = 0;
    std::int64_t max_steps = 0;  // 0 = unlimited
    std::string log_path;        // CSV: step,loss,lr,val_miou
    std::string checkpoint_path;
    bool head_only = false;  // optimizer restricted to head parameters
    /// Carried into checkpoint metadata alongside the step counter
    /// (e.g. a hash of the resolved run configuration).
    std::map<std::string, std::string> run_metadata;
};

struct TrainResult {
    std::vector<float> losses;  // one per step
    double best_val_miou = -1.0;
    std::int64_t steps = 0;
    std::string log;  // full CSV content
};

TrainResult train(ModelGraph& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& cfg);

/// Argmax over channels per pixel.
LabelMap argmax_labels(const Tensor& probs, std::int64_t batch_index = 0);

/// Mean IoU of model predictions against labels (inference mode).
double evaluate_miou(ModelGraph& model, const std::vector<TrainSample>& samples);

double training_pixel_accuracy(ModelGraph& model, const std::vector<TrainSample>& samples);

}  // namespace uvid
