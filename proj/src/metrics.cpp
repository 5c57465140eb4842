#include "aifn/trainer.hpp"

namespace aifn {

std::string label_name(int label) {
    if (label == kLabelTrue) {
        return "true";
    }
    if (label == kLabelFalse) {
        return "false";
    }
    throw ContractError("label " + std::to_string(label) + " has no name");
}

namespace {

ClassMetrics one_direction(const std::vector<int>& predicted, const std::vector<int>& actual,
                           int positive) {
    ClassMetrics m;
    m.positive_class = label_name(positive);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool pred_pos = predicted[i] == positive;
        const bool is_pos = actual[i] == positive;
        if (pred_pos && is_pos) {
            ++m.tp;
        } else if (pred_pos && !is_pos) {
            ++m.fp;
        } else if (!pred_pos && is_pos) {
            ++m.fn;
        } else {
            ++m.tn;
        }
    }
    const std::size_t total = m.tp + m.fp + m.fn + m.tn;
    m.accuracy = total ? static_cast<double>(m.tp + m.tn) / static_cast<double>(total) : 0.0;
    m.precision =
        m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual,
                              int positive_label) {
    if (predicted.empty() || predicted.size() != actual.size()) {
        throw ContractError("got " + std::to_string(predicted.size()) + " predictions for " +
                            std::to_string(actual.size()) + " labels");
    }
    for (const std::vector<int>* seq : {&predicted, &actual}) {
        for (const int v : *seq) {
            if (v != kLabelTrue && v != kLabelFalse) {
                throw ContractError("label " + std::to_string(v) +
                                    " is neither true news nor false news");
            }
        }
    }
    if (positive_label != kLabelTrue && positive_label != kLabelFalse) {
        throw ContractError("positive class must be one of the two labels");
    }
    const int other = positive_label == kLabelFalse ? kLabelTrue : kLabelFalse;
    MetricsReport report;
    report.positive = one_direction(predicted, actual, positive_label);
    report.negative = one_direction(predicted, actual, other);
    report.accuracy = report.positive.accuracy;
    report.macro_precision = (report.positive.precision + report.negative.precision) / 2.0;
    report.macro_recall = (report.positive.recall + report.negative.recall) / 2.0;
    report.macro_f1 = (report.positive.f1 + report.negative.f1) / 2.0;
    return report;
}

MetricsReport evaluate(const Model& model, const std::vector<TokenizedThread>& split,
                       int positive_label) {
    if (split.empty()) {
        throw ContractError("cannot evaluate an empty split");
    }
    std::vector<int> predicted, actual;
    predicted.reserve(split.size());
    actual.reserve(split.size());
    for (const TokenizedThread& thread : split) {
        Tape tape(false);
        const Tensor probs = model.forward_thread(tape, thread, Mode::infer);
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.numel(); ++c) {
            if (probs.at(c) > probs.at(best)) {
                best = c;
            }
        }
        predicted.push_back(static_cast<int>(best));
        actual.push_back(thread.label);
    }
    return compute_metrics(predicted, actual, positive_label);
}

}  // namespace aifn
