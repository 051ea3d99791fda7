#include "uvid/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "uvid/metrics.hpp"

namespace uvid {

LabelBatch LabelBatch::from_maps(const std::vector<const LabelMap*>& maps) {
    if (maps.empty()) throw std::invalid_argument("LabelBatch: empty");
    LabelBatch b;
    b.n = static_cast<std::int64_t>(maps.size());
    b.h = maps.front()->h;
    b.w = maps.front()->w;
    b.idx.reserve(static_cast<std::size_t>(b.n * b.h * b.w));
    for (const LabelMap* m : maps) {
        if (m->h != b.h || m->w != b.w) {
            throw std::invalid_argument("LabelBatch: inconsistent label sizes");
        }
        b.idx.insert(b.idx.end(), m->idx.begin(), m->idx.end());
    }
    return b;
}

CrossEntropyResult cross_entropy_loss(const Tensor& probs, const LabelBatch& target) {
    const Shape& s = probs.shape();
    if (s.n != target.n || s.h != target.h || s.w != target.w) {
        throw std::invalid_argument("cross_entropy_loss: probs " + s.str() +
                                    " vs targets (" + std::to_string(target.n) + ",*," +
                                    std::to_string(target.h) + "," + std::to_string(target.w) +
                                    ")");
    }
    const std::int64_t plane = s.h * s.w;
    const std::int64_t pixel_count = s.n * plane;
    const double inv_count = 1.0 / static_cast<double>(pixel_count);

    CrossEntropyResult res;
    res.grad_logits = Tensor(s);
    double loss = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t i = 0; i < plane; ++i) {
            const std::int32_t t = target.idx[static_cast<std::size_t>(n * plane + i)];
            if (t < 0 || t >= s.c) {
                throw std::invalid_argument("cross_entropy_loss: target index " +
                                            std::to_string(t) + " outside [0," +
                                            std::to_string(s.c) + ")");
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t idx = (n * s.c + c) * plane + i;
                const float p = probs.data()[idx];
                res.grad_logits.data()[idx] =
                    static_cast<float>((p - (c == t ? 1.0 : 0.0)) * inv_count);
            }
            float p = probs.data()[(n * s.c + t) * plane + i];
            if (p < 1e-12f) {
                p = 1e-12f;
                ++res.clamped;
            }
            loss -= std::log(static_cast<double>(p));
        }
    }
    res.loss = static_cast<float>(loss * inv_count);
    if (!std::isfinite(res.loss)) {
        throw std::runtime_error("cross_entropy_loss: non-finite loss");
    }
    return res;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(ParamRegistry& registry, AdamConfig cfg, const std::set<std::string>& frozen)
    : cfg_(cfg) {
    for (auto& e : registry.entries()) {
        if (!e.learnable) continue;
        if (frozen.count(e.name)) continue;
        targets_.push_back(&e);
        m_.emplace_back(e.value->shape());
        v_.emplace_back(e.value->shape());
    }
}

void Adam::step() {
    for (const ParamEntry* e : targets_) {
        if (!e->value->has_grad()) {
            throw std::runtime_error("Adam::step: no gradient for " + e->name);
        }
        const float* g = e->value->grad();
        for (std::int64_t i = 0; i < e->value->numel(); ++i) {
            if (!std::isfinite(g[i])) {
                throw std::runtime_error("Adam::step aborted: non-finite gradient in " + e->name +
                                         " at index " + std::to_string(i));
            }
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (std::size_t k = 0; k < targets_.size(); ++k) {
        ParamEntry* e = targets_[k];
        float* theta = e->value->data();
        const float* g = e->value->grad();
        float* m = m_[k].data();
        float* v = v_[k].data();
        for (std::int64_t i = 0; i < e->value->numel(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

std::vector<std::pair<std::string, const Tensor*>> Adam::state_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t k = 0; k < targets_.size(); ++k) {
        out.emplace_back("optim.adam.m." + targets_[k]->name, &m_[k]);
        out.emplace_back("optim.adam.v." + targets_[k]->name, &v_[k]);
    }
    return out;
}

void Adam::load_state(const std::map<std::string, std::vector<float>>& entries, std::int64_t t) {
    for (std::size_t k = 0; k < targets_.size(); ++k) {
        const auto im = entries.find("optim.adam.m." + targets_[k]->name);
        const auto iv = entries.find("optim.adam.v." + targets_[k]->name);
        if (im == entries.end() || iv == entries.end()) {
            throw std::runtime_error("Adam::load_state: missing moments for " +
                                     targets_[k]->name);
        }
        if (im->second.size() != m_[k].values().size()) {
            throw std::runtime_error("Adam::load_state: size mismatch for " + targets_[k]->name);
        }
        m_[k].values() = im->second;
        v_[k].values() = iv->second;
    }
    t_ = t;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'V', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ofstream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::ifstream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::ifstream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

void write_entry(std::ofstream& os, const std::string& name,
                 const std::vector<std::int64_t>& dims, const Tensor& t) {
    if (name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long");
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(dims.size()));
    for (std::int64_t d : dims) put_u64(os, static_cast<std::uint64_t>(d));
    // float payload, little-endian (host is little-endian x86/arm here)
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelGraph& model, const Adam* optimizer,
                     const std::map<std::string, std::string>& metadata) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        os.write(kMagic, 4);
        put_u32(os, kVersion);

        const auto& entries = model.params().entries();
        std::uint32_t count = static_cast<std::uint32_t>(entries.size());
        std::vector<std::pair<std::string, const Tensor*>> opt;
        Tensor t_steps(Shape{1, 1, 1, 1});
        if (optimizer) {
            opt = optimizer->state_tensors();
            t_steps.data()[0] = static_cast<float>(optimizer->steps());
            count += static_cast<std::uint32_t>(opt.size()) + 1;
        }
        count += static_cast<std::uint32_t>(metadata.size());
        put_u32(os, count);

        for (const auto& e : entries) write_entry(os, e.name, e.dims, *e.value);
        if (optimizer) {
            for (const auto& [name, t] : opt) {
                write_entry(os, name, {t->numel()}, *t);
            }
            write_entry(os, "optim.adam.t", {1}, t_steps);
        }
        for (const auto& [k, v] : metadata) {
            // metadata payload: bytes of the value string as u8 floats
            Tensor tv(Shape{1, 1, 1, static_cast<std::int64_t>(v.size())});
            for (std::size_t i = 0; i < v.size(); ++i) {
                tv.data()[i] = static_cast<float>(static_cast<unsigned char>(v[i]));
            }
            write_entry(os, "meta." + k, {static_cast<std::int64_t>(v.size())}, tv);
        }
        if (!os) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
    }
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("read_checkpoint: bad magic in " + path);
    }
    Checkpoint ckpt;
    ckpt.version = get_u32(is);
    if (ckpt.version != kVersion) {
        throw std::runtime_error("read_checkpoint: unsupported version " +
                                 std::to_string(ckpt.version));
    }
    const std::uint32_t count = get_u32(is);
    ckpt.entries.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry& e = ckpt.entries[i];
        const std::uint16_t len = get_u16(is);
        e.name.resize(len);
        is.read(e.name.data(), len);
        const int rank = is.get();
        if (rank < 0 || rank > 8) {
            throw std::runtime_error("read_checkpoint: bad rank in entry " + e.name);
        }
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            e.dims.push_back(static_cast<std::int64_t>(get_u64(is)));
            numel *= e.dims.back();
        }
        e.values.resize(static_cast<std::size_t>(numel));
        is.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw std::runtime_error("read_checkpoint: truncated file " + path);
    }
    return ckpt;
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

void load_checkpoint(ModelGraph& model, const Checkpoint& ckpt) {
    for (auto& e : model.params().entries()) {
        const CheckpointEntry* src = ckpt.find(e.name);
        if (!src) throw std::runtime_error("load_checkpoint: missing entry " + e.name);
        if (static_cast<std::int64_t>(src->values.size()) != e.value->numel() ||
            src->dims != e.dims) {
            throw std::runtime_error("load_checkpoint: shape mismatch for " + e.name);
        }
        e.value->values() = src->values;
    }
}

// ---------------------------------------------------------------------------
// transfer learning
// ---------------------------------------------------------------------------

TransferPlan TransferPlan::cityscapes_to_uavid() {
    TransferPlan plan;
    plan.source_classes = 8;
    plan.target_classes = 4;
    plan.lr = 1e-4f;
    plan.class_remap = {{"flat", "road"},       {"human", ""},   {"vehicle", ""},
                        {"construction", "construction"},        {"object", ""},
                        {"nature", "greenery"}, {"sky", ""},     {"void", ""}};
    return plan;
}

std::vector<std::string> apply_transfer(ModelGraph& model, const Checkpoint& ckpt,
                                        const TransferPlan& plan, std::uint64_t seed) {
    const std::string head = plan.head_prefix;
    std::vector<std::string> mismatched;
    // verify: every non-head registry entry must exist in the checkpoint with
    // identical dims; head entries must exist with the source class count.
    for (auto& e : model.params().entries()) {
        const bool is_head = e.name.rfind(head, 0) == 0;
        const CheckpointEntry* src = ckpt.find(e.name);
        if (!src) {
            mismatched.push_back(e.name + " (missing from checkpoint)");
            continue;
        }
        if (is_head) continue;  // reinitialized below
        if (src->dims != e.dims) {
            mismatched.push_back(e.name + " (shape mismatch)");
        }
    }
    if (!mismatched.empty()) {
        std::string msg = "apply_transfer: registry mismatch outside the head:";
        for (const auto& m : mismatched) msg += "\n  " + m;
        throw std::runtime_error(msg);
    }
    if (model.num_classes() != plan.target_classes) {
        throw std::runtime_error("apply_transfer: model head has " +
                                 std::to_string(model.num_classes()) + " classes, plan expects " +
                                 std::to_string(plan.target_classes));
    }

    std::vector<std::string> frozen;
    for (auto& e : model.params().entries()) {
        if (e.name.rfind(head, 0) == 0) continue;
        e.value->values() = ckpt.find(e.name)->values;
        if (e.learnable) frozen.push_back(e.name);
    }
    // fresh head for the target class count
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
    for (auto& n : model.mutable_nodes()) {
        if (n.name.rfind(head, 0) == 0 && n.layer) n.layer->init_params(rng);
    }
    model.freeze_all_but_head();
    return frozen;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

LabelMap argmax_labels(const Tensor& probs, std::int64_t batch_index) {
    const Shape& s = probs.shape();
    LabelMap out;
    out.h = s.h;
    out.w = s.w;
    out.idx.resize(static_cast<std::size_t>(s.h * s.w));
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t i = 0; i < plane; ++i) {
        std::int32_t best = 0;
        float bv = probs.data()[(batch_index * s.c) * plane + i];
        for (std::int64_t c = 1; c < s.c; ++c) {
            const float v = probs.data()[(batch_index * s.c + c) * plane + i];
            if (v > bv) {
                bv = v;
                best = static_cast<std::int32_t>(c);
            }
        }
        out.idx[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double evaluate_miou(ModelGraph& model, const std::vector<TrainSample>& samples) {
    if (samples.empty()) return 0.0;
    ConfusionMatrix cm(model.num_classes());
    for (const auto& s : samples) {
        const Tensor probs = model.num_inputs() == 2
                                 ? model.forward(s.input_a, s.input_b, false)
                                 : model.forward(s.input_b, false);
        cm.accumulate(argmax_labels(probs), s.label);
    }
    return miou(cm);
}

double training_pixel_accuracy(ModelGraph& model, const std::vector<TrainSample>& samples) {
    ConfusionMatrix cm(model.num_classes());
    for (const auto& s : samples) {
        const Tensor probs = model.num_inputs() == 2
                                 ? model.forward(s.input_a, s.input_b, false)
                                 : model.forward(s.input_b, false);
        cm.accumulate(argmax_labels(probs), s.label);
    }
    return pixel_accuracy(cm);
}

TrainResult train(ModelGraph& model, const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set, const TrainConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");

    std::set<std::string> frozen;
    if (cfg.head_only) {
        for (const auto& name : model.frozen_param_names()) frozen.insert(name);
    }
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(model.params(), acfg, frozen);

    std::mt19937 shuffle_rng(static_cast<std::mt19937::result_type>(cfg.seed ^ 0x9e3779b9));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult res;
    std::string log = "step,loss,lr,val_miou\n";
    char line[128];
    bool stop = false;

    for (std::int64_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t pos = 0; pos < order.size() && !stop;
             pos += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Tensor> as, bs;
            std::vector<const LabelMap*> ys;
            for (std::size_t k = pos; k < end; ++k) {
                as.push_back(train_set[order[k]].input_a);
                bs.push_back(train_set[order[k]].input_b);
                ys.push_back(&train_set[order[k]].label);
            }
            const Tensor batch_a = stack_batch(as);
            const Tensor batch_b = stack_batch(bs);
            const LabelBatch targets = LabelBatch::from_maps(ys);

            const Tensor probs = model.num_inputs() == 2
                                     ? model.forward(batch_a, batch_b, true)
                                     : model.forward(batch_b, true);
            const CrossEntropyResult ce = cross_entropy_loss(probs, targets);
            if (!std::isfinite(ce.loss)) {
                throw std::runtime_error("train: divergence, non-finite loss at step " +
                                         std::to_string(res.steps + 1));
            }
            model.zero_grads();
            model.backward_from_logits(ce.grad_logits);
            opt.step();

            ++res.steps;
            res.losses.push_back(ce.loss);
            std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,\n",
                          static_cast<long long>(res.steps), static_cast<double>(ce.loss),
                          static_cast<double>(cfg.lr));
            log += line;
            if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) stop = true;
        }
        // end-of-epoch validation
        if (!val_set.empty()) {
            const double vm = evaluate_miou(model, val_set);
            std::snprintf(line, sizeof(line), "%lld,,%.9g,%.6f\n",
                          static_cast<long long>(res.steps), static_cast<double>(cfg.lr), vm);
            log += line;
            if (vm > res.best_val_miou) {
                res.best_val_miou = vm;
                if (!cfg.checkpoint_path.empty()) {
                    auto meta = cfg.run_metadata;
                    meta["step"] = std::to_string(res.steps);
                    save_checkpoint(cfg.checkpoint_path, model, &opt, meta);
                }
            }
        }
    }
    if (val_set.empty() && !cfg.checkpoint_path.empty()) {
        auto meta = cfg.run_metadata;
        meta["step"] = std::to_string(res.steps);
        save_checkpoint(cfg.checkpoint_path, model, &opt, meta);
    }
    res.log = log;
    if (!cfg.log_path.empty()) {
        const std::string tmp = cfg.log_path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary);
            if (!os) throw std::runtime_error("train: cannot open log " + tmp);
            os << log;
        }
        if (std::rename(tmp.c_str(), cfg.log_path.c_str()) != 0) {
            throw std::runtime_error("train: rename of log to " + cfg.log_path + " failed");
        }
    }
    return res;
}

}  // namespace uvid
