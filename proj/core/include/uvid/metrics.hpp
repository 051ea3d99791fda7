#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uvid/dataset.hpp"

namespace uvid {

/// C x C pixel counts; entry (truth, predicted).
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(std::int64_t num_classes);

    std::int64_t num_classes() const { return c_; }
    std::uint64_t at(std::int64_t truth, std::int64_t pred) const {
        return counts_[static_cast<std::size_t>(truth * c_ + pred)];
    }
    std::uint64_t& at(std::int64_t truth, std::int64_t pred) {
        return counts_[static_cast<std::size_t>(truth * c_ + pred)];
    }
    std::uint64_t total() const;

    void accumulate(const LabelMap& pred, const LabelMap& truth);
    ConfusionMatrix& merge(const ConfusionMatrix& other);

    std::uint64_t true_positive(std::int64_t c) const { return at(c, c); }
    std::uint64_t false_positive(std::int64_t c) const;
    std::uint64_t false_negative(std::int64_t c) const;

  private:
    std::int64_t c_;
    std::vector<std::uint64_t> counts_;
};

/// IoU per class; classes with TP+FP+FN == 0 are undefined (nullopt).
std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm);

/// Mean over defined classes; throws if every class is undefined.
double miou(const ConfusionMatrix& cm);

enum class Averaging { kMacro, kMicro };

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Macro: unweighted mean over defined classes (TP+FP+FN > 0), with 0/0
/// ratios scored as 0. Micro: from global TP/FP/FN sums; for single-label
/// multiclass, micro precision == micro recall == pixel accuracy.
PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm, Averaging avg);

double pixel_accuracy(const ConfusionMatrix& cm);

struct SequenceResult {
    std::string name;
    ConfusionMatrix cm;
};

struct MetricsReport {
    std::string text;  // human-readable table
    std::string csv;   // machine-readable, fixed column order
};

/// Per-sequence rows plus an aggregate row. Column order: per-class IoU in
/// palette order, miou, then macro and micro P/R/F1.
MetricsReport report(const std::vector<SequenceResult>& sequences, const Palette& palette);

}  // namespace uvid
