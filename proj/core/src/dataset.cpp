#include "uvid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace uvid {

Palette::Palette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) {
        throw std::invalid_argument("Palette: needs at least 2 classes");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        for (std::size_t j = i + 1; j < entries_.size(); ++j) {
            if (entries_[i].rgb == entries_[j].rgb) {
                throw std::invalid_argument("Palette: duplicate color for " + entries_[i].name +
                                            " and " + entries_[j].name);
            }
        }
    }
}

Palette Palette::manipal_uavid() {
    return Palette({{"greenery", {0, 255, 0}},
                    {"road", {128, 128, 128}},
                    {"construction", {255, 0, 0}},
                    {"water", {0, 0, 255}}});
}

Palette Palette::parse(const std::string& text) {
    std::vector<PaletteEntry> entries;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw std::invalid_argument("Palette::parse: missing ':' in \"" + item + "\"");
        }
        PaletteEntry e;
        e.name = item.substr(0, colon);
        int r, g, b;
        if (std::sscanf(item.c_str() + colon + 1, "%d,%d,%d", &r, &g, &b) != 3 ||
            r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
            throw std::invalid_argument("Palette::parse: bad color in \"" + item + "\"");
        }
        e.rgb = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                 static_cast<std::uint8_t>(b)};
        entries.push_back(e);
    }
    return Palette(std::move(entries));
}

LabelMap encode_labels(const ImageU8& img, const Palette& palette, int tolerance) {
    LabelMap out;
    out.h = img.height;
    out.w = img.width;
    out.idx.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* p = img.px(x, y);
            int best = -1, best_d = 256;
            bool tie = false;
            for (std::int64_t c = 0; c < palette.num_classes(); ++c) {
                const auto& rgb = palette.entry(c).rgb;
                const int d = std::max({std::abs(p[0] - rgb[0]), std::abs(p[1] - rgb[1]),
                                        std::abs(p[2] - rgb[2])});
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                    tie = false;
                } else if (d == best_d) {
                    tie = true;
                }
            }
            if (best_d > tolerance) {
                throw std::runtime_error("encode_labels: pixel (" + std::to_string(x) + "," +
                                         std::to_string(y) + ") color (" + std::to_string(p[0]) +
                                         "," + std::to_string(p[1]) + "," + std::to_string(p[2]) +
                                         ") is outside the palette (tolerance " +
                                         std::to_string(tolerance) + ")");
            }
            if (tie) {
                throw std::runtime_error("encode_labels: pixel (" + std::to_string(x) + "," +
                                         std::to_string(y) + ") is equidistant from two palette "
                                         "entries");
            }
            out.at(y, x) = best;
        }
    }
    return out;
}

ImageU8 decode_labels(const LabelMap& labels, const Palette& palette) {
    ImageU8 img;
    img.width = static_cast<int>(labels.w);
    img.height = static_cast<int>(labels.h);
    img.rgb.resize(static_cast<std::size_t>(labels.w) * labels.h * 3);
    for (std::int64_t y = 0; y < labels.h; ++y) {
        for (std::int64_t x = 0; x < labels.w; ++x) {
            const std::int32_t c = labels.at(y, x);
            if (c < 0 || c >= palette.num_classes()) {
                throw std::runtime_error("decode_labels: index " + std::to_string(c) +
                                         " outside palette");
            }
            const auto& rgb = palette.entry(c).rgb;
            std::uint8_t* p = img.px(static_cast<int>(x), static_cast<int>(y));
            p[0] = rgb[0];
            p[1] = rgb[1];
            p[2] = rgb[2];
        }
    }
    return img;
}

Tensor image_to_tensor(const ImageU8& img) {
    Tensor t(Shape{1, 3, img.height, img.width});
    const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* p = img.px(x, y);
            const std::int64_t i = static_cast<std::int64_t>(y) * img.width + x;
            t.data()[i] = p[0] / 255.0f;
            t.data()[plane + i] = p[1] / 255.0f;
            t.data()[2 * plane + i] = p[2] / 255.0f;
        }
    }
    return t;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    if (items.empty()) throw std::invalid_argument("stack_batch: empty batch");
    const Shape s0 = items.front().shape();
    Tensor out(Shape{static_cast<std::int64_t>(items.size()) * s0.n, s0.c, s0.h, s0.w});
    std::int64_t off = 0;
    for (const auto& t : items) {
        if (t.shape().c != s0.c || t.shape().h != s0.h || t.shape().w != s0.w) {
            throw std::invalid_argument("stack_batch: inconsistent item shapes");
        }
        std::copy(t.data(), t.data() + t.numel(), out.data() + off);
        off += t.numel();
    }
    return out;
}

LoadedPair load_pair(const ManifestRecord& rec, std::int64_t target_h, std::int64_t target_w,
                     const Palette& palette) {
    LoadedPair out;
    const ImageU8 a = read_png(rec.input_a);
    const ImageU8 b = read_png(rec.input_b);
    out.input_a = image_to_tensor(
        resize_bilinear(a, static_cast<int>(target_w), static_cast<int>(target_h)));
    out.input_b = image_to_tensor(
        resize_bilinear(b, static_cast<int>(target_w), static_cast<int>(target_h)));
    if (!rec.label.empty()) {
        ImageU8 lbl = read_png(rec.label);
        const ImageU8 tgt = read_png(rec.target);
        if (lbl.width != tgt.width || lbl.height != tgt.height) {
            throw std::runtime_error("load_pair: label " + rec.label + " is " +
                                     std::to_string(lbl.width) + "x" + std::to_string(lbl.height) +
                                     " but target frame is " + std::to_string(tgt.width) + "x" +
                                     std::to_string(tgt.height));
        }
        lbl = resize_nearest(lbl, static_cast<int>(target_w), static_cast<int>(target_h));
        out.label = encode_labels(lbl, palette);
    }
    return out;
}

std::array<DatasetSplit, 3> make_splits(const std::vector<ManifestRecord>& pairs,
                                        const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::fabs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("make_splits: ratios must be non-negative and sum to 1");
    }
    std::vector<ManifestRecord> shuffled = pairs;
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    const auto n = static_cast<std::int64_t>(shuffled.size());
    const auto n_val = static_cast<std::int64_t>(std::floor(ratios.val * n + 0.5));
    const auto n_test = static_cast<std::int64_t>(std::floor(ratios.test * n + 0.5));
    const std::int64_t n_train = n - n_val - n_test;
    if (n_train < 0) throw std::invalid_argument("make_splits: ratios leave no training data");

    std::array<DatasetSplit, 3> out;
    out[0].name = "train";
    out[1].name = "val";
    out[2].name = "test";
    out[0].records.assign(shuffled.begin(), shuffled.begin() + n_train);
    out[1].records.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
    out[2].records.assign(shuffled.begin() + n_train + n_val, shuffled.end());
    return out;
}

std::array<DatasetSplit, 3> make_splits_explicit(
    const std::vector<ManifestRecord>& pairs,
    const std::vector<std::string>& train_targets,
    const std::vector<std::string>& val_targets,
    const std::vector<std::string>& test_targets) {
    std::unordered_map<std::string, int> assign;
    auto add = [&](const std::vector<std::string>& targets, int split) {
        for (const auto& t : targets) {
            auto [it, inserted] = assign.emplace(t, split);
            if (!inserted) {
                throw std::invalid_argument("make_splits_explicit: " + t +
                                            " assigned to more than one split");
            }
        }
    };
    add(train_targets, 0);
    add(val_targets, 1);
    add(test_targets, 2);

    std::array<DatasetSplit, 3> out;
    out[0].name = "train";
    out[1].name = "val";
    out[2].name = "test";
    for (const auto& r : pairs) {
        const auto it = assign.find(r.target);
        if (it == assign.end()) {
            throw std::invalid_argument("make_splits_explicit: no assignment for " + r.target);
        }
        out[static_cast<std::size_t>(it->second)].records.push_back(r);
    }
    return out;
}

void write_split(const std::string& path, const DatasetSplit& split) {
    write_manifest(path, split.records);
}

}  // namespace uvid
