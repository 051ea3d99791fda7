#include "uvid/metrics.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace uvid {

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes) : c_(num_classes) {
    if (num_classes < 2) {
        throw std::invalid_argument("ConfusionMatrix: need >= 2 classes");
    }
    counts_.assign(static_cast<std::size_t>(c_ * c_), 0);
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& truth) {
    if (pred.h != truth.h || pred.w != truth.w) {
        throw std::invalid_argument("ConfusionMatrix::accumulate: shape mismatch " +
                                    std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                                    " vs " + std::to_string(truth.h) + "x" +
                                    std::to_string(truth.w));
    }
    for (std::size_t i = 0; i < pred.idx.size(); ++i) {
        const std::int32_t p = pred.idx[i];
        const std::int32_t t = truth.idx[i];
        if (p < 0 || p >= c_ || t < 0 || t >= c_) {
            throw std::invalid_argument("ConfusionMatrix::accumulate: class index out of range");
        }
        ++at(t, p);
    }
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw std::invalid_argument("ConfusionMatrix::merge: size mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::false_positive(std::int64_t c) const {
    std::uint64_t fp = 0;
    for (std::int64_t t = 0; t < c_; ++t) {
        if (t != c) fp += at(t, c);
    }
    return fp;
}

std::uint64_t ConfusionMatrix::false_negative(std::int64_t c) const {
    std::uint64_t fn = 0;
    for (std::int64_t p = 0; p < c_; ++p) {
        if (p != c) fn += at(c, p);
    }
    return fn;
}

std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(static_cast<std::size_t>(cm.num_classes()));
    for (std::int64_t c = 0; c < cm.num_classes(); ++c) {
        const std::uint64_t tp = cm.true_positive(c);
        const std::uint64_t denom = tp + cm.false_positive(c) + cm.false_negative(c);
        if (denom > 0) {
            out[static_cast<std::size_t>(c)] =
                static_cast<double>(tp) / static_cast<double>(denom);
        }
    }
    return out;
}

double miou(const ConfusionMatrix& cm) {
    const auto ious = per_class_iou(cm);
    double sum = 0.0;
    int defined = 0;
    for (const auto& v : ious) {
        if (v) {
            sum += *v;
            ++defined;
        }
    }
    if (defined == 0) {
        throw std::runtime_error("miou: every class is undefined (empty confusion matrix)");
    }
    return sum / defined;
}

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm, Averaging avg) {
    PrecisionRecallF1 out;
    if (avg == Averaging::kMicro) {
        std::uint64_t tp = 0, fp = 0, fn = 0;
        for (std::int64_t c = 0; c < cm.num_classes(); ++c) {
            tp += cm.true_positive(c);
            fp += cm.false_positive(c);
            fn += cm.false_negative(c);
        }
        out.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        out.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        out.f1 = out.precision + out.recall > 0
                     ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                     : 0.0;
        return out;
    }
    double sp = 0.0, sr = 0.0, sf = 0.0;
    int defined = 0;
    for (std::int64_t c = 0; c < cm.num_classes(); ++c) {
        const std::uint64_t tp = cm.true_positive(c);
        const std::uint64_t fp = cm.false_positive(c);
        const std::uint64_t fn = cm.false_negative(c);
        if (tp + fp + fn == 0) continue;  // absent in both pred and truth
        const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
        sp += p;
        sr += r;
        sf += f;
        ++defined;
    }
    if (defined == 0) {
        throw std::runtime_error("precision_recall_f1: every class is undefined");
    }
    out.precision = sp / defined;
    out.recall = sr / defined;
    out.f1 = sf / defined;
    return out;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
    std::uint64_t diag = 0;
    for (std::int64_t c = 0; c < cm.num_classes(); ++c) diag += cm.true_positive(c);
    const std::uint64_t total = cm.total();
    return total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

namespace {

std::string metric_cell(const std::optional<double>& v) {
    if (!v) return "   n/a";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.4f", *v);
    return buf;
}

void append_row(std::ostringstream& text, std::ostringstream& csv, const std::string& name,
                const ConfusionMatrix& cm) {
    const auto ious = per_class_iou(cm);
    const double m = miou(cm);
    const auto macro = precision_recall_f1(cm, Averaging::kMacro);
    const auto micro = precision_recall_f1(cm, Averaging::kMicro);

    text << "  " << name;
    if (name.size() < 20) text << std::string(20 - name.size(), ' ');
    for (const auto& v : ious) text << "  " << metric_cell(v);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %6.4f  %6.4f/%6.4f/%6.4f  %6.4f/%6.4f/%6.4f\n", m,
                  macro.precision, macro.recall, macro.f1, micro.precision, micro.recall,
                  micro.f1);
    text << buf;

    csv << name;
    for (const auto& v : ious) {
        csv << ",";
        if (v) {
            std::snprintf(buf, sizeof(buf), "%.6f", *v);
            csv << buf;
        }
    }
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", m, macro.precision,
                  macro.recall, macro.f1, micro.precision, micro.recall, micro.f1);
    csv << buf;
}

}  // namespace

MetricsReport report(const std::vector<SequenceResult>& sequences, const Palette& palette) {
    if (sequences.empty()) throw std::invalid_argument("report: no confusion matrices");
    std::ostringstream text, csv;

    text << "per-class IoU (palette order), mIoU, macro P/R/F1, micro P/R/F1\n";
    text << "undefined classes (absent in prediction and ground truth) are excluded from means\n";
    text << "metrics computed at network resolution\n  sequence            ";
    csv << "sequence";
    for (const auto& e : palette.entries()) {
        text << "  " << e.name.substr(0, 6);
        if (e.name.size() < 6) text << std::string(6 - e.name.size(), ' ');
        csv << ",iou_" << e.name;
    }
    text << "  miou    macro(P/R/F1)           micro(P/R/F1)\n";
    csv << ",miou,precision_macro,recall_macro,f1_macro,precision_micro,recall_micro,f1_micro\n";

    ConfusionMatrix agg(palette.num_classes());
    for (const auto& s : sequences) {
        append_row(text, csv, s.name, s.cm);
        agg.merge(s.cm);
    }
    if (sequences.size() > 1) {
        append_row(text, csv, "aggregate", agg);
    }
    return MetricsReport{text.str(), csv.str()};
}

}  // namespace uvid
