// End-to-end drive of the uvid CLI binary: synthetic frames -> keyframes ->
// train -> eval -> infer, plus the infer/encode roundtrip and train-log
// determinism. The CLI path arrives as argv[1] from ctest.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "uvid/dataset.hpp"
#include "uvid/graph.hpp"
#include "uvid/keyframes.hpp"
#include "uvid/train.hpp"

namespace fs = std::filesystem;
using namespace uvid;

namespace {

int g_failures = 0;

void expect(bool ok, const std::string& what) {
    std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++g_failures;
}

int run(const std::string& cmd) {
    std::printf("$ %s\n", cmd.c_str());
    return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

ImageU8 halves(int w, int h, std::array<std::uint8_t, 3> left,
               std::array<std::uint8_t, 3> right, bool vertical) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool first = vertical ? (x < w / 2) : (y < h / 2);
            const auto& c = first ? left : right;
            auto* p = img.px(x, y);
            p[0] = c[0];
            p[1] = c[1];
            p[2] = c[2];
        }
    }
    return img;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: cli_pipeline <path-to-uvid-binary>\n");
        return 2;
    }
    const std::string uvid = argv[1];
    const fs::path root = fs::temp_directory_path() / "uvid_cli_pipeline";
    fs::remove_all(root);
    fs::create_directories(root / "frames");
    fs::create_directories(root / "labels");

    // two scenes of 30 frames; labels use the default palette colors
    for (int i = 1; i <= 60; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.png", i);
        const bool scene_a = i <= 30;
        const ImageU8 frame =
            scene_a ? halves(64, 64, {20, 200, 30}, {120, 120, 120}, true)
                    : halves(64, 64, {10, 20, 230}, {235, 20, 15}, false);
        write_png((root / "frames" / name).string(), frame);
        const ImageU8 label = scene_a
                                  ? halves(64, 64, {0, 255, 0}, {128, 128, 128}, true)
                                  : halves(64, 64, {0, 0, 255}, {255, 0, 0}, false);
        write_png((root / "labels" / name).string(), label);
    }

    const std::string manifest = (root / "pairs.tsv").string();
    const std::string common = " --base-width 8 --height 64 --width 64";

    expect(run(uvid + " keyframes --frames " + (root / "frames").string() + " --labels " +
               (root / "labels").string() + " --threshold 0.35 --out " + manifest +
               " > /dev/null") == 0,
           "keyframes command succeeds");
    const auto records = read_manifest(manifest);
    expect(records.size() == 2, "manifest has one pair per shot");
    expect(records.size() == 2 && records[0].input_b.find("0015.png") != std::string::npos &&
               records[1].input_a.find("0016.png") != std::string::npos &&
               records[1].target.find("0045.png") != std::string::npos,
           "pairing rule: (1,15) and (16,45)");

    const std::string run1 = (root / "run1").string();
    expect(run(uvid + " train --manifest " + manifest + " --val-manifest " + manifest +
               " --out-dir " + run1 + common +
               " --epochs 40 --batch 2 --lr 0.001 --seed 7 > /dev/null") == 0,
           "train command succeeds");
    expect(fs::exists(run1 + "/model.uvnc") && fs::exists(run1 + "/train_log.csv"),
           "train writes checkpoint and log");

    // determinism through the CLI: same seed -> byte-identical logs
    const std::string run2 = (root / "run2").string();
    expect(run(uvid + " train --manifest " + manifest + " --val-manifest " + manifest +
               " --out-dir " + run2 + common +
               " --epochs 40 --batch 2 --lr 0.001 --seed 7 > /dev/null") == 0,
           "second identical train run succeeds");
    expect(slurp(run1 + "/train_log.csv") == slurp(run2 + "/train_log.csv"),
           "identical seeds give byte-identical training logs");

    const std::string report = (root / "report").string();
    expect(run(uvid + " eval --manifest " + manifest + " --checkpoint " + run1 +
               "/model.uvnc --out " + report + common + " > /dev/null") == 0,
           "eval command succeeds");
    const std::string csv = slurp(report + ".csv");
    expect(csv.find("sequence,iou_greenery,iou_road,iou_construction,iou_water,miou") == 0,
           "report column order follows the palette then miou");

    const std::string pred = (root / "pred").string();
    expect(run(uvid + " infer --manifest " + manifest + " --checkpoint " + run1 +
               "/model.uvnc --out-dir " + pred + common + " > /dev/null") == 0,
           "infer command succeeds");

    // roundtrip: re-encoding the emitted PNG reproduces the argmax labels
    {
        ArchConfig cfg;
        cfg.base_width = 8;
        cfg.input_h = 64;
        cfg.input_w = 64;
        ModelGraph g = build_uvidnet(cfg);
        load_checkpoint(g, read_checkpoint(run1 + "/model.uvnc"));
        const Palette pal = Palette::manipal_uavid();
        bool all = true;
        for (const auto& rec : records) {
            const LoadedPair lp = load_pair(rec, 64, 64, pal);
            const LabelMap want = argmax_labels(g.forward(lp.input_a, lp.input_b, false));
            const std::string out =
                (fs::path(pred) / fs::path(rec.target).filename()).string();
            const LabelMap got = encode_labels(read_png(out), pal);
            all = all && got.idx == want.idx;
        }
        expect(all, "infer PNG re-encoded with the palette equals the argmax labels");
    }

    expect(run(uvid + " eval --manifest " + manifest + " --checkpoint " + root.string() +
               "/missing.uvnc" + common + " > /dev/null 2>&1") != 0,
           "missing checkpoint exits nonzero");

    fs::remove_all(root);
    if (g_failures) {
        std::printf("%d CLI pipeline check(s) failed\n", g_failures);
        return 1;
    }
    std::printf("cli pipeline ok\n");
    return 0;
}
