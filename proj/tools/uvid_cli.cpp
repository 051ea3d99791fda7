// uvid: keyframe extraction, architecture inspection, training, transfer
// learning, evaluation and inference for two-branch video segmentation
// models.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "uvid/config.hpp"
#include "uvid/dataset.hpp"
#include "uvid/graph.hpp"
#include "uvid/keyframes.hpp"
#include "uvid/metrics.hpp"
#include "uvid/train.hpp"

namespace fs = std::filesystem;
using namespace uvid;

namespace {

const std::set<std::string> kConfigKeys = {
    "encoder", "merge",  "base_width", "classes", "height", "width",
    "seed",    "lr",     "epochs",     "batch",   "threshold", "palette",
};

struct CommonOpts {
    std::string config_path;
    std::string encoder = "unet";
    std::string merge = "multiplication";
    std::int64_t base_width = 64;
    std::int64_t classes = 4;
    std::int64_t height = 256;
    std::int64_t width = 256;
    std::uint64_t seed = 0;
    std::string palette;
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "key = value configuration file");
    cmd->add_option("--encoder", o.encoder, "unet | resnet50")->capture_default_str();
    cmd->add_option("--merge", o.merge, "multiplication | concatenation")
        ->capture_default_str();
    cmd->add_option("--base-width", o.base_width, "first-block feature maps")
        ->capture_default_str();
    cmd->add_option("--classes", o.classes, "number of classes")->capture_default_str();
    cmd->add_option("--height", o.height, "network input height")->capture_default_str();
    cmd->add_option("--width", o.width, "network input width")->capture_default_str();
    cmd->add_option("--seed", o.seed, "deterministic seed")->capture_default_str();
    cmd->add_option("--palette", o.palette, "name:r,g,b;... class colors");
}

// config file first, explicit flags override
void resolve_common(const CLI::App* cmd, CommonOpts& o) {
    if (o.config_path.empty()) return;
    RunConfig cfg(kConfigKeys);
    cfg.load_file(o.config_path);
    if (!cmd->count("--encoder")) o.encoder = cfg.get("encoder", o.encoder);
    if (!cmd->count("--merge")) o.merge = cfg.get("merge", o.merge);
    if (!cmd->count("--base-width")) o.base_width = cfg.get_int("base_width", o.base_width);
    if (!cmd->count("--classes")) o.classes = cfg.get_int("classes", o.classes);
    if (!cmd->count("--height")) o.height = cfg.get_int("height", o.height);
    if (!cmd->count("--width")) o.width = cfg.get_int("width", o.width);
    if (!cmd->count("--seed")) o.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    if (!cmd->count("--palette")) o.palette = cfg.get("palette", o.palette);
}

ArchConfig to_arch(const CommonOpts& o) {
    ArchConfig cfg;
    if (o.encoder == "unet") {
        cfg.encoder = Encoder::kUNet;
    } else if (o.encoder == "resnet50") {
        cfg.encoder = Encoder::kResNet50;
    } else {
        throw std::runtime_error("unknown encoder \"" + o.encoder + "\"");
    }
    if (o.merge == "multiplication") {
        cfg.merge = Merge::kMultiplication;
    } else if (o.merge == "concatenation") {
        cfg.merge = Merge::kConcatenation;
    } else {
        throw std::runtime_error("unknown merge \"" + o.merge + "\"");
    }
    cfg.base_width = o.base_width;
    cfg.num_classes = o.classes;
    cfg.input_h = o.height;
    cfg.input_w = o.width;
    return cfg;
}

Palette to_palette(const CommonOpts& o) {
    return o.palette.empty() ? Palette::manipal_uavid() : Palette::parse(o.palette);
}

std::string config_text(const CommonOpts& o) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  encoder = %s\n  merge = %s\n  base_width = %lld\n  classes = %lld\n"
                  "  input = %lldx%lld\n  seed = %llu\n",
                  o.encoder.c_str(), o.merge.c_str(), static_cast<long long>(o.base_width),
                  static_cast<long long>(o.classes), static_cast<long long>(o.height),
                  static_cast<long long>(o.width), static_cast<unsigned long long>(o.seed));
    return buf;
}

std::string config_hash(const CommonOpts& o) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016zx", std::hash<std::string>{}(config_text(o)));
    return buf;
}

void echo_config(const CommonOpts& o, const std::string& extra = "") {
    std::printf("resolved config:\n%s", config_text(o).c_str());
    if (!extra.empty()) std::printf("%s", extra.c_str());
    std::printf("\n");
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp);
        os << content;
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("rename to " + path + " failed");
    }
}

std::vector<TrainSample> load_samples(const std::string& manifest_path, const CommonOpts& o,
                                      const Palette& pal, bool need_labels) {
    const auto records = read_manifest(manifest_path);
    std::vector<TrainSample> out;
    for (const auto& rec : records) {
        if (need_labels && rec.label.empty()) {
            throw std::runtime_error("manifest record for " + rec.target +
                                     " has no label path (required here)");
        }
        LoadedPair lp = load_pair(rec, o.height, o.width, pal);
        TrainSample s;
        s.input_a = std::move(lp.input_a);
        s.input_b = std::move(lp.input_b);
        s.label = std::move(lp.label);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_inspect(const CommonOpts& o, bool baseline, bool calibrate, const std::string& out) {
    echo_config(o, baseline ? "  baseline = true\n" : "");
    std::string text;
    if (calibrate) {
        const CalibrationResult cal = calibrate_unet_interpretation();
        text += cal.report;
        text += "\n";
    }
    const ArchConfig cfg = to_arch(o);
    ModelGraph g = baseline ? build_unet_baseline(cfg) : build_uvidnet(cfg);
    text += g.ledger();
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "\ntotals: learnable params %lld, params incl. BN stats %lld, flops %lld "
                  "(at %lldx%lld input)\n",
                  static_cast<long long>(g.count_params()),
                  static_cast<long long>(g.count_params_total()),
                  static_cast<long long>(g.count_flops()), static_cast<long long>(cfg.input_h),
                  static_cast<long long>(cfg.input_w));
    text += buf;
    std::fputs(text.c_str(), stdout);
    if (!out.empty()) {
        write_text_atomic(out, text);
        std::printf("ledger written to %s\n", out.c_str());
    }
    return 0;
}

int cmd_keyframes(const CommonOpts& o, const std::string& frames_dir, double threshold,
                  const std::string& out, const std::string& labels_dir) {
    echo_config(o, "  threshold = " + std::to_string(threshold) + "\n  frames = " + frames_dir +
                       "\n");
    const FrameSequence seq = FrameSequence::from_directory(frames_dir);
    const auto shots = detect_shots(seq, threshold);
    const auto pairs = make_pairs(shots);
    write_manifest(out, pairs_to_records(pairs, seq, labels_dir));

    double mean_len = 0.0;
    for (const auto& s : shots) mean_len += static_cast<double>(s.length());
    mean_len /= static_cast<double>(shots.size());
    std::printf("%lld frames -> %zu shots (mean length %.1f), %zu pairs -> %s\n",
                static_cast<long long>(seq.size()), shots.size(), mean_len, pairs.size(),
                out.c_str());
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& manifest, const std::string& val_manifest,
              const std::string& out_dir, std::int64_t epochs, std::int64_t batch, double lr) {
    char extra[160];
    std::snprintf(extra, sizeof(extra), "  epochs = %lld\n  batch = %lld\n  lr = %g\n",
                  static_cast<long long>(epochs), static_cast<long long>(batch), lr);
    echo_config(o, extra);

    const Palette pal = to_palette(o);
    const auto train_set = load_samples(manifest, o, pal, true);
    std::vector<TrainSample> val_set;
    if (!val_manifest.empty()) val_set = load_samples(val_manifest, o, pal, true);

    ArchConfig cfg = to_arch(o);
    cfg.num_classes = pal.num_classes();
    ModelGraph g = build_uvidnet(cfg);
    g.init_params(o.seed);

    fs::create_directories(out_dir);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.lr = static_cast<float>(lr);
    tc.seed = o.seed;
    tc.log_path = (fs::path(out_dir) / "train_log.csv").string();
    tc.checkpoint_path = (fs::path(out_dir) / "model.uvnc").string();
    tc.run_metadata["config_hash"] = config_hash(o);
    const TrainResult res = train(g, train_set, val_set, tc);

    std::printf("trained %lld steps; final loss %.6f", static_cast<long long>(res.steps),
                res.losses.empty() ? 0.0 : static_cast<double>(res.losses.back()));
    if (res.best_val_miou >= 0) std::printf("; best val mIoU %.4f", res.best_val_miou);
    std::printf("\nlog: %s\ncheckpoint: %s\n", tc.log_path.c_str(),
                tc.checkpoint_path.c_str());
    return 0;
}

int cmd_transfer(const CommonOpts& o, const std::string& src_ckpt, const std::string& manifest,
                 const std::string& val_manifest, const std::string& out_dir,
                 std::int64_t source_classes, std::int64_t epochs, std::int64_t batch,
                 double lr) {
    char extra[200];
    std::snprintf(extra, sizeof(extra),
                  "  source_checkpoint = %s\n  source_classes = %lld\n  lr = %g (head only)\n",
                  src_ckpt.c_str(), static_cast<long long>(source_classes), lr);
    echo_config(o, extra);

    const Palette pal = to_palette(o);
    const auto train_set = load_samples(manifest, o, pal, true);
    std::vector<TrainSample> val_set;
    if (!val_manifest.empty()) val_set = load_samples(val_manifest, o, pal, true);

    ArchConfig cfg = to_arch(o);
    cfg.num_classes = pal.num_classes();
    ModelGraph g = build_uvidnet(cfg);
    g.init_params(o.seed);

    TransferPlan plan = TransferPlan::cityscapes_to_uavid();
    plan.source_classes = source_classes;
    plan.target_classes = pal.num_classes();
    plan.lr = static_cast<float>(lr);
    const auto frozen = apply_transfer(g, read_checkpoint(src_ckpt), plan, o.seed);

    std::int64_t head_params = 0;
    for (const auto& e : g.params().entries()) {
        if (e.name.rfind("head", 0) == 0 && e.learnable) head_params += e.value->numel();
    }
    std::printf("loaded %zu frozen parameter tensors; retraining %lld head parameters\n",
                frozen.size(), static_cast<long long>(head_params));
    std::printf("class remap (source -> target, empty = dropped):\n");
    for (const auto& [from, to] : plan.class_remap) {
        std::printf("  %-14s -> %s\n", from.c_str(), to.empty() ? "-" : to.c_str());
    }

    fs::create_directories(out_dir);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.lr = plan.lr;
    tc.seed = o.seed;
    tc.head_only = true;
    tc.log_path = (fs::path(out_dir) / "transfer_log.csv").string();
    tc.checkpoint_path = (fs::path(out_dir) / "model.uvnc").string();
    tc.run_metadata["config_hash"] = config_hash(o);
    const TrainResult res = train(g, train_set, val_set, tc);

    std::printf("transfer-trained %lld steps", static_cast<long long>(res.steps));
    if (res.best_val_miou >= 0) std::printf("; best val mIoU %.4f", res.best_val_miou);
    std::printf("\nlog: %s\ncheckpoint: %s\n", tc.log_path.c_str(),
                tc.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& manifest, const std::string& ckpt,
             const std::string& out_prefix) {
    echo_config(o, "  checkpoint = " + ckpt + "\n");
    const Palette pal = to_palette(o);
    ArchConfig cfg = to_arch(o);
    cfg.num_classes = pal.num_classes();
    ModelGraph g = build_uvidnet(cfg);
    load_checkpoint(g, read_checkpoint(ckpt));

    const auto records = read_manifest(manifest);
    std::map<std::string, ConfusionMatrix> per_video;
    for (const auto& rec : records) {
        if (rec.label.empty()) {
            throw std::runtime_error("eval: record for " + rec.target + " has no label path");
        }
        const LoadedPair lp = load_pair(rec, o.height, o.width, pal);
        const Tensor probs = g.forward(lp.input_a, lp.input_b, false);
        const std::string video = fs::path(rec.target).parent_path().filename().string();
        auto [it, inserted] = per_video.try_emplace(video, pal.num_classes());
        it->second.accumulate(argmax_labels(probs), lp.label);
    }
    std::vector<SequenceResult> results;
    for (auto& [name, cm] : per_video) results.push_back({name, cm});
    const MetricsReport rep = report(results, pal);
    std::fputs(rep.text.c_str(), stdout);
    if (!out_prefix.empty()) {
        write_text_atomic(out_prefix + ".txt", rep.text);
        write_text_atomic(out_prefix + ".csv", rep.csv);
        std::printf("report written to %s.txt / %s.csv\n", out_prefix.c_str(),
                    out_prefix.c_str());
    }
    return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& manifest, const std::string& ckpt,
              const std::string& out_dir) {
    echo_config(o, "  checkpoint = " + ckpt + "\n");
    const Palette pal = to_palette(o);
    ArchConfig cfg = to_arch(o);
    cfg.num_classes = pal.num_classes();
    ModelGraph g = build_uvidnet(cfg);
    load_checkpoint(g, read_checkpoint(ckpt));

    fs::create_directories(out_dir);
    const auto records = read_manifest(manifest);
    for (const auto& rec : records) {
        const LoadedPair lp = load_pair(rec, o.height, o.width, pal);
        const Tensor probs = g.forward(lp.input_a, lp.input_b, false);
        const LabelMap labels = argmax_labels(probs);
        const ImageU8 colored = decode_labels(labels, pal);
        const std::string out = (fs::path(out_dir) / fs::path(rec.target).filename()).string();
        write_png(out, colored);
        std::printf("%s -> %s\n", rec.target.c_str(), out.c_str());
    }
    return 0;
}

int cmd_compare(const CommonOpts& o) {
    echo_config(o);
    CommonOpts m = o;
    m.merge = "multiplication";
    CommonOpts c = o;
    c.merge = "concatenation";
    ModelGraph gm = build_uvidnet(to_arch(m));
    ModelGraph gc = build_uvidnet(to_arch(c));

    const std::int64_t pm = gm.count_params_total();
    const std::int64_t pc = gc.count_params_total();
    const std::int64_t fm = gm.count_flops();
    const std::int64_t fc = gc.count_flops();
    std::printf("merge variant comparison (%s encoder, base %lld, %lldx%lld):\n",
                o.encoder.c_str(), static_cast<long long>(o.base_width),
                static_cast<long long>(o.height), static_cast<long long>(o.width));
    std::printf("  params (incl. BN stats): multiplication %lld vs concatenation %lld "
                "(%.2f%% reduction)\n",
                static_cast<long long>(pm), static_cast<long long>(pc),
                100.0 * (1.0 - static_cast<double>(pm) / static_cast<double>(pc)));
    std::printf("  learnable params:        multiplication %lld vs concatenation %lld\n",
                static_cast<long long>(gm.count_params()),
                static_cast<long long>(gc.count_params()));
    std::printf("  flops:                   multiplication %lld vs concatenation %lld "
                "(%.2f%% reduction)\n",
                static_cast<long long>(fm), static_cast<long long>(fc),
                100.0 * (1.0 - static_cast<double>(fm) / static_cast<double>(fc)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-branch temporal video segmentation toolkit"};
    app.require_subcommand(1);

    CommonOpts o;
    bool baseline = false, calibrate = false;
    std::string frames_dir, labels_dir, manifest, val_manifest, out, out_dir, ckpt;
    double threshold = 0.35;
    std::int64_t epochs = 40, batch = 2, source_classes = 8;
    double lr = 1e-4;

    auto* inspect = app.add_subcommand("inspect", "per-layer parameter/flop ledger");
    add_common_flags(inspect, o);
    inspect->add_flag("--baseline", baseline, "single-branch classic U-Net baseline");
    inspect->add_flag("--calibrate", calibrate, "run the parameter-count calibration search");
    inspect->add_option("--out", out, "also write the ledger to this file");

    auto* keyframes = app.add_subcommand("keyframes", "shot detection and pair manifest");
    add_common_flags(keyframes, o);
    keyframes->add_option("--frames", frames_dir, "directory of .png frames")->required();
    keyframes->add_option("--threshold", threshold, "histogram dissimilarity in (0,1)")
        ->capture_default_str();
    keyframes->add_option("--out", out, "output manifest path")->required();
    keyframes->add_option("--labels", labels_dir, "attach label paths from this directory");

    auto* train_cmd = app.add_subcommand("train", "train from a labelled pair manifest");
    add_common_flags(train_cmd, o);
    train_cmd->add_option("--manifest", manifest, "training manifest")->required();
    train_cmd->add_option("--val-manifest", val_manifest, "validation manifest");
    train_cmd->add_option("--out-dir", out_dir, "log + checkpoint directory")->required();
    train_cmd->add_option("--epochs", epochs)->capture_default_str();
    train_cmd->add_option("--batch", batch)->capture_default_str();
    train_cmd->add_option("--lr", lr)->capture_default_str();

    auto* transfer = app.add_subcommand("transfer", "freeze all but the head and retrain it");
    add_common_flags(transfer, o);
    transfer->add_option("--checkpoint", ckpt, "source checkpoint (N-class)")->required();
    transfer->add_option("--source-classes", source_classes)->capture_default_str();
    transfer->add_option("--manifest", manifest, "training manifest")->required();
    transfer->add_option("--val-manifest", val_manifest, "validation manifest");
    transfer->add_option("--out-dir", out_dir, "log + checkpoint directory")->required();
    transfer->add_option("--epochs", epochs)->capture_default_str();
    transfer->add_option("--batch", batch)->capture_default_str();
    transfer->add_option("--lr", lr, "head learning rate")->capture_default_str();

    auto* eval_cmd = app.add_subcommand("eval", "confusion-matrix metrics report");
    add_common_flags(eval_cmd, o);
    eval_cmd->add_option("--manifest", manifest, "labelled manifest")->required();
    eval_cmd->add_option("--checkpoint", ckpt)->required();
    eval_cmd->add_option("--out", out, "report path prefix (.txt/.csv)");

    auto* infer = app.add_subcommand("infer", "write color-coded label PNGs");
    add_common_flags(infer, o);
    infer->add_option("--manifest", manifest, "pair manifest")->required();
    infer->add_option("--checkpoint", ckpt)->required();
    infer->add_option("--out-dir", out_dir, "output directory")->required();

    auto* compare = app.add_subcommand("compare", "multiplication vs concatenation deltas");
    add_common_flags(compare, o);

    CLI11_PARSE(app, argc, argv);

    try {
        if (inspect->parsed()) {
            resolve_common(inspect, o);
            return cmd_inspect(o, baseline, calibrate, out);
        }
        if (keyframes->parsed()) {
            resolve_common(keyframes, o);
            return cmd_keyframes(o, frames_dir, threshold, out, labels_dir);
        }
        if (train_cmd->parsed()) {
            resolve_common(train_cmd, o);
            return cmd_train(o, manifest, val_manifest, out_dir, epochs, batch, lr);
        }
        if (transfer->parsed()) {
            resolve_common(transfer, o);
            return cmd_transfer(o, ckpt, manifest, val_manifest, out_dir, source_classes,
                                epochs, batch, lr);
        }
        if (eval_cmd->parsed()) {
            resolve_common(eval_cmd, o);
            return cmd_eval(o, manifest, ckpt, out);
        }
        if (infer->parsed()) {
            resolve_common(infer, o);
            return cmd_infer(o, manifest, ckpt, out_dir);
        }
        if (compare->parsed()) {
            resolve_common(compare, o);
            return cmd_compare(o);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
