#pragma once

// Binary-classification metrics: Pr/Re/F1/Acc at threshold 0.5, AUC via the
// Mann-Whitney rank statistic (ties half credit), and the ROC polyline with
// one point per distinct score threshold.

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "texvit/tensor.hpp"

namespace texvit {

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    bool auc_defined = false; // false when only one class is present
    double accuracy = 0.0;
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::vector<RocPoint> roc;
    std::string corruption = "none";

    int64_t total() const { return tp + fp + tn + fn; }

    // Fixed keys; auc serializes as null when undefined.
    std::string to_json() const {
        nlohmann::ordered_json j;
        j["precision"] = precision;
        j["recall"] = recall;
        j["f1"] = f1;
        if (auc_defined)
            j["auc"] = auc;
        else
            j["auc"] = nullptr;
        j["accuracy"] = accuracy;
        j["tp"] = tp;
        j["fp"] = fp;
        j["tn"] = tn;
        j["fn"] = fn;
        j["corruption"] = corruption;
        return j.dump(2);
    }

    std::string roc_csv() const {
        std::string out = "fpr,tpr,threshold\n";
        char buf[96];
        for (const auto& p : roc) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
            out += buf;
        }
        return out;
    }
};

namespace metrics_detail {

inline void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw ContractError("metrics: scores and labels must be non-empty and equal length");
    for (int l : labels)
        if (l != 0 && l != 1) throw ContractError("metrics: labels must be 0 or 1");
}

} // namespace metrics_detail

// AUC as the Mann-Whitney U statistic with midranks (ties count half).
inline double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    metrics_detail::check_inputs(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    int64_t n1 = 0;
    double rank_sum = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] == 1) {
            ++n1;
            rank_sum += rank[k];
        }
    const int64_t n0 = static_cast<int64_t>(n) - n1;
    if (n0 == 0 || n1 == 0)
        throw ContractError("auc: undefined with a single class");
    return (rank_sum - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0) /
           (static_cast<double>(n0) * static_cast<double>(n1));
}

// Points at every distinct score threshold, descending, starting from (0,0).
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
    metrics_detail::check_inputs(scores, labels);
    int64_t n1 = 0;
    for (int l : labels) n1 += l;
    const int64_t n0 = static_cast<int64_t>(labels.size()) - n1;
    if (n0 == 0 || n1 == 0) throw ContractError("roc_curve: both classes must be present");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const double thr = scores[order[i]];
        while (i < order.size() && scores[order[i]] == thr) {
            if (labels[order[i]] == 1)
                ++tp;
            else
                ++fp;
            ++i;
        }
        roc.push_back({static_cast<double>(fp) / static_cast<double>(n0),
                       static_cast<double>(tp) / static_cast<double>(n1), thr});
    }
    return roc;
}

inline double trapezoid_auc(const std::vector<RocPoint>& roc) {
    double area = 0.0;
    for (size_t i = 1; i < roc.size(); ++i)
        area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
    return area;
}

// Complete report. Count metrics use threshold 0.5 (score >= 0.5 predicts
// class 1); precision/recall fall back to 0 when undefined; AUC is flagged
// undefined when only one class is present.
inline MetricsReport compute_metrics(const std::vector<double>& scores,
                                     const std::vector<int>& labels) {
    metrics_detail::check_inputs(scores, labels);
    MetricsReport r;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= 0.5;
        if (pred && labels[i] == 1)
            ++r.tp;
        else if (pred && labels[i] == 0)
            ++r.fp;
        else if (!pred && labels[i] == 0)
            ++r.tn;
        else
            ++r.fn;
    }
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp)
                                    : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
                                 : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.total());
    int64_t n1 = 0;
    for (int l : labels) n1 += l;
    if (n1 > 0 && n1 < static_cast<int64_t>(labels.size())) {
        r.auc = mann_whitney_auc(scores, labels);
        r.auc_defined = true;
        r.roc = roc_curve(scores, labels);
    }
    return r;
}

} // namespace texvit
