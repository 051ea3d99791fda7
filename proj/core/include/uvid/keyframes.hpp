#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace uvid {

/// Normalized 48-bin RGB histogram (16 bins per channel); bins sum to 1.
using FrameHistogram = std::array<double, 48>;

/// Ordered frame image paths; indices are 1-based throughout, matching the
/// shot/keyframe arithmetic.
class FrameSequence {
  public:
    /// Scans a directory for .png files; lexicographic order = temporal order.
    static FrameSequence from_directory(const std::string& dir);
    /// In-memory sequence for tests: per-frame RGB8 buffers.
    static FrameSequence from_frames(std::vector<std::vector<std::uint8_t>> rgb,
                                     int width, int height);

    std::int64_t size() const { return static_cast<std::int64_t>(count_); }
    const std::string& path(std::int64_t index1) const;  // 1-based
    const FrameHistogram& histogram(std::int64_t index1) const;

  private:
    std::size_t count_ = 0;
    std::vector<std::string> paths_;
    mutable std::vector<FrameHistogram> hist_;
    mutable std::vector<char> hist_ready_;
    std::vector<std::vector<std::uint8_t>> mem_rgb_;
    int mem_w_ = 0, mem_h_ = 0;
};

FrameHistogram rgb_histogram(const std::uint8_t* rgb, std::int64_t pixels);

/// Halved L1 distance between two normalized histograms; in [0, 1].
double histogram_distance(const FrameHistogram& a, const FrameHistogram& b);

struct Shot {
    std::int64_t index = 0;  // 1-based shot number
    std::int64_t start = 0;  // global frame indices, 1-based, inclusive
    std::int64_t end = 0;
    std::int64_t length() const { return end - start + 1; }
};

struct KeyframePair {
    std::int64_t input_a = 0;  // temporal-context frame (previous shot)
    std::int64_t input_b = 0;  // current keyframe; always equals target
    std::int64_t target = 0;
    std::int64_t shot = 0;
};

/// Declares a boundary between frames i, i+1 whenever the histogram distance
/// exceeds the threshold; shots are the maximal runs in between.
std::vector<Shot> detect_shots(const FrameSequence& seq, double threshold);

/// Keyframe of a shot: frame-in-shot floor(n/2) with a floor of 1.
std::int64_t keyframe_of(const Shot& shot);

/// One pair per shot. Shot 1 pairs the first frame of the video with its
/// keyframe; shot l>1 pairs frame floor(n/2)+1 of shot l-1 with the keyframe
/// of shot l.
std::vector<KeyframePair> make_pairs(const std::vector<Shot>& shots);

struct ManifestRecord {
    std::int64_t shot = 0;
    std::string input_a;
    std::string input_b;
    std::string target;
    std::string label;  // optional, empty when absent
};

/// Tab-separated, one record per line:
/// shot_index \t input_a_path \t input_b_path \t target_path [\t label_path]
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

/// Builds manifest records from pairs, optionally attaching label paths as
/// label_dir/<target filename>.
std::vector<ManifestRecord> pairs_to_records(const std::vector<KeyframePair>& pairs,
                                             const FrameSequence& seq,
                                             const std::string& label_dir = "");

}  // namespace uvid
