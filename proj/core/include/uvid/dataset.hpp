#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uvid/image.hpp"
#include "uvid/keyframes.hpp"
#include "uvid/tensor.hpp"

namespace uvid {

struct PaletteEntry {
    std::string name;
    std::array<std::uint8_t, 3> rgb;
};

/// Ordered class palette; class index = list position.
class Palette {
  public:
    Palette() = default;
    explicit Palette(std::vector<PaletteEntry> entries);

    /// greenery/road/construction/water with the canonical saturated colors.
    static Palette manipal_uavid();
    /// Parses "name:r,g,b;name:r,g,b;..." overrides.
    static Palette parse(const std::string& text);

    std::int64_t num_classes() const { return static_cast<std::int64_t>(entries_.size()); }
    const PaletteEntry& entry(std::int64_t i) const { return entries_[static_cast<std::size_t>(i)]; }
    const std::vector<PaletteEntry>& entries() const { return entries_; }

  private:
    std::vector<PaletteEntry> entries_;
};

struct LabelMap {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::int32_t> idx;  // row-major, values in [0, C)

    std::int32_t& at(std::int64_t y, std::int64_t x) { return idx[static_cast<std::size_t>(y * w + x)]; }
    std::int32_t at(std::int64_t y, std::int64_t x) const { return idx[static_cast<std::size_t>(y * w + x)]; }
};

/// Per-pixel nearest palette index; every pixel must lie within L-inf
/// distance `tolerance` of exactly one entry.
LabelMap encode_labels(const ImageU8& img, const Palette& palette, int tolerance = 8);
ImageU8 decode_labels(const LabelMap& labels, const Palette& palette);

/// Image tensor (1,3,H,W), RGB in [0,1].
Tensor image_to_tensor(const ImageU8& img);
/// Stacks (1,C,H,W) tensors along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& items);

struct LoadedPair {
    Tensor input_a;  // (1,3,H,W)
    Tensor input_b;
    LabelMap label;  // empty (h==0) when the record has no label
};

/// Loads and resizes one manifest record: frames bilinearly to target size,
/// label (if present) nearest-neighbour then palette-encoded.
LoadedPair load_pair(const ManifestRecord& rec, std::int64_t target_h, std::int64_t target_w,
                     const Palette& palette);

struct DatasetSplit {
    std::string name;
    std::vector<ManifestRecord> records;
};

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

/// Deterministic seeded shuffle, then val/test sized by rounding ratio*N and
/// train taking the remainder (711 pairs at the default ratios -> 569/71/71).
/// Splits are disjoint by target path.
std::array<DatasetSplit, 3> make_splits(const std::vector<ManifestRecord>& pairs,
                                        const SplitRatios& ratios, std::uint64_t seed);

/// Explicit assignment: each record goes to the split naming its target path;
/// unlisted records are an error, as are overlapping assignments.
std::array<DatasetSplit, 3> make_splits_explicit(
    const std::vector<ManifestRecord>& pairs,
    const std::vector<std::string>& train_targets,
    const std::vector<std::string>& val_targets,
    const std::vector<std::string>& test_targets);

void write_split(const std::string& path, const DatasetSplit& split);

}  // namespace uvid
