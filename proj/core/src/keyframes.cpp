#include "uvid/keyframes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "uvid/image.hpp"

namespace uvid {

FrameSequence FrameSequence::from_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    FrameSequence seq;
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("FrameSequence: not a directory: " + dir);
    }
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") {
            seq.paths_.push_back(e.path().string());
        }
    }
    std::sort(seq.paths_.begin(), seq.paths_.end());
    if (seq.paths_.empty()) {
        throw std::runtime_error("FrameSequence: no .png frames in " + dir);
    }
    seq.count_ = seq.paths_.size();
    seq.hist_.resize(seq.count_);
    seq.hist_ready_.assign(seq.count_, 0);
    return seq;
}

FrameSequence FrameSequence::from_frames(std::vector<std::vector<std::uint8_t>> rgb,
                                         int width, int height) {
    FrameSequence seq;
    if (rgb.empty()) throw std::runtime_error("FrameSequence: empty sequence");
    seq.count_ = rgb.size();
    seq.mem_rgb_ = std::move(rgb);
    seq.mem_w_ = width;
    seq.mem_h_ = height;
    for (std::size_t i = 0; i < seq.count_; ++i) {
        seq.paths_.push_back("<memory:" + std::to_string(i + 1) + ">");
        if (seq.mem_rgb_[i].size() != static_cast<std::size_t>(width) * height * 3) {
            throw std::runtime_error("FrameSequence: bad frame buffer size at index " +
                                     std::to_string(i + 1));
        }
    }
    seq.hist_.resize(seq.count_);
    seq.hist_ready_.assign(seq.count_, 0);
    return seq;
}

const std::string& FrameSequence::path(std::int64_t index1) const {
    if (index1 < 1 || index1 > size()) {
        throw std::out_of_range("FrameSequence: index " + std::to_string(index1));
    }
    return paths_[static_cast<std::size_t>(index1 - 1)];
}

const FrameHistogram& FrameSequence::histogram(std::int64_t index1) const {
    const auto i = static_cast<std::size_t>(index1 - 1);
    if (index1 < 1 || i >= count_) {
        throw std::out_of_range("FrameSequence: index " + std::to_string(index1));
    }
    if (!hist_ready_[i]) {
        if (!mem_rgb_.empty()) {
            hist_[i] = rgb_histogram(mem_rgb_[i].data(),
                                     static_cast<std::int64_t>(mem_w_) * mem_h_);
        } else {
            ImageU8 img;
            try {
                img = read_png(paths_[i]);
            } catch (const std::exception& e) {
                throw std::runtime_error("detect_shots: unreadable frame " + paths_[i] + ": " +
                                         e.what());
            }
            hist_[i] = rgb_histogram(img.rgb.data(),
                                     static_cast<std::int64_t>(img.width) * img.height);
        }
        hist_ready_[i] = 1;
    }
    return hist_[i];
}

FrameHistogram rgb_histogram(const std::uint8_t* rgb, std::int64_t pixels) {
    FrameHistogram h{};
    for (std::int64_t i = 0; i < pixels; ++i) {
        h[static_cast<std::size_t>(rgb[3 * i] / 16)] += 1.0;
        h[16 + static_cast<std::size_t>(rgb[3 * i + 1] / 16)] += 1.0;
        h[32 + static_cast<std::size_t>(rgb[3 * i + 2] / 16)] += 1.0;
    }
    const double total = 3.0 * static_cast<double>(pixels);
    for (double& v : h) v /= total;
    return h;
}

double histogram_distance(const FrameHistogram& a, const FrameHistogram& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::fabs(a[i] - b[i]);
    return 0.5 * d;
}

std::vector<Shot> detect_shots(const FrameSequence& seq, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw std::invalid_argument("detect_shots: threshold must lie in (0,1)");
    }
    std::vector<Shot> shots;
    std::int64_t start = 1;
    for (std::int64_t i = 1; i < seq.size(); ++i) {
        const double d = histogram_distance(seq.histogram(i), seq.histogram(i + 1));
        if (d > threshold) {
            shots.push_back(Shot{static_cast<std::int64_t>(shots.size()) + 1, start, i});
            start = i + 1;
        }
    }
    shots.push_back(Shot{static_cast<std::int64_t>(shots.size()) + 1, start, seq.size()});
    return shots;
}

std::int64_t keyframe_of(const Shot& shot) {
    const std::int64_t in_shot = std::max<std::int64_t>(1, shot.length() / 2);
    return shot.start + in_shot - 1;
}

std::vector<KeyframePair> make_pairs(const std::vector<Shot>& shots) {
    std::vector<KeyframePair> pairs;
    pairs.reserve(shots.size());
    for (std::size_t l = 0; l < shots.size(); ++l) {
        KeyframePair p;
        p.shot = shots[l].index;
        p.target = keyframe_of(shots[l]);
        p.input_b = p.target;
        if (l == 0) {
            p.input_a = shots.empty() ? 1 : shots.front().start;  // first frame of the video
        } else {
            const Shot& prev = shots[l - 1];
            const std::int64_t in_prev = std::min(prev.length(), prev.length() / 2 + 1);
            p.input_a = prev.start + in_prev - 1;
        }
        pairs.push_back(p);
    }
    return pairs;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("write_manifest: cannot open " + tmp);
        for (const auto& r : records) {
            os << r.shot << '\t' << r.input_a << '\t' << r.input_b << '\t' << r.target;
            if (!r.label.empty()) os << '\t' << r.label;
            os << '\n';
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("write_manifest: rename to " + path + " failed");
    }
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<std::string> f;
        std::string tok;
        while (std::getline(ls, tok, '\t')) f.push_back(tok);
        if (f.size() < 4 || f.size() > 5) {
            throw std::runtime_error("read_manifest: malformed line " + std::to_string(lineno) +
                                     " in " + path);
        }
        ManifestRecord r;
        r.shot = std::stoll(f[0]);
        r.input_a = f[1];
        r.input_b = f[2];
        r.target = f[3];
        if (f.size() == 5) r.label = f[4];
        out.push_back(r);
    }
    return out;
}

std::vector<ManifestRecord> pairs_to_records(const std::vector<KeyframePair>& pairs,
                                             const FrameSequence& seq,
                                             const std::string& label_dir) {
    namespace fs = std::filesystem;
    std::vector<ManifestRecord> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        ManifestRecord r;
        r.shot = p.shot;
        r.input_a = seq.path(p.input_a);
        r.input_b = seq.path(p.input_b);
        r.target = seq.path(p.target);
        if (!label_dir.empty()) {
            r.label = (fs::path(label_dir) / fs::path(r.target).filename()).string();
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace uvid
