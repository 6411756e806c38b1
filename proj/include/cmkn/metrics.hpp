#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmkn/common.hpp"

namespace cmkn {

struct MetricsReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    double mcc = 0.0;
    double auroc = 0.0;
    double auprc = 0.0;
    bool auc_defined = true;  // false when only one class is present
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long n_samples = 0;
};

/// Binary classification metrics from labels and real-valued scores. The
/// confusion matrix thresholds at score >= threshold. auROC uses the
/// Mann-Whitney rank statistic with midrank tie correction; auPRC uses
/// step-wise summation without interpolation. With a single-class label
/// vector both areas are flagged undefined and the thresholded metrics are
/// still computed.
inline MetricsReport compute_metrics(const std::vector<int>& labels,
                                     const std::vector<double>& scores,
                                     double threshold = 0.5) {
    const std::size_t n = labels.size();
    if (n == 0) throw config_error("compute_metrics: empty input");
    if (scores.size() != n)
        throw config_error("compute_metrics: labels and scores differ in length");
    for (int l : labels)
        if (l != 0 && l != 1) throw config_error("compute_metrics: labels must be 0/1");

    MetricsReport r;
    r.n_samples = static_cast<long>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1)
            pred ? ++r.tp : ++r.fn;
        else
            pred ? ++r.fp : ++r.tn;
    }
    r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(n);
    const double f1_den = static_cast<double>(2 * r.tp + r.fp + r.fn);
    r.f1 = f1_den > 0.0 ? 2.0 * static_cast<double>(r.tp) / f1_den : 0.0;

    const double m1 = static_cast<double>(r.tp + r.fp);
    const double m2 = static_cast<double>(r.tp + r.fn);
    const double m3 = static_cast<double>(r.tn + r.fp);
    const double m4 = static_cast<double>(r.tn + r.fn);
    if (m1 == 0.0 || m2 == 0.0 || m3 == 0.0 || m4 == 0.0) {
        r.mcc = 0.0;
    } else {
        r.mcc = (static_cast<double>(r.tp) * r.tn - static_cast<double>(r.fp) * r.fn) /
                std::sqrt(m1 * m2 * m3 * m4);
    }

    const long n_pos = r.tp + r.fn;
    const long n_neg = r.tn + r.fp;
    if (n_pos == 0 || n_neg == 0) {
        r.auc_defined = false;
        return r;
    }

    // auROC: midranks over the pooled scores.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based midrank
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t t = 0; t < n; ++t)
        if (labels[t] == 1) rank_sum_pos += rank[t];
    r.auroc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));

    // auPRC: walk thresholds from the highest score down, whole tie groups at
    // once; area = sum over recall increments of the precision at that point.
    std::vector<std::size_t> desc(order.rbegin(), order.rend());
    double area = 0.0;
    double prev_recall = 0.0;
    long tp_run = 0, fp_run = 0;
    std::size_t t = 0;
    while (t < n) {
        std::size_t j = t;
        while (j + 1 < n && scores[desc[j + 1]] == scores[desc[t]]) ++j;
        for (std::size_t q = t; q <= j; ++q)
            labels[desc[q]] == 1 ? ++tp_run : ++fp_run;
        const double recall = static_cast<double>(tp_run) / static_cast<double>(n_pos);
        const double precision =
            static_cast<double>(tp_run) / static_cast<double>(tp_run + fp_run);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        t = j + 1;
    }
    r.auprc = area;
    return r;
}

struct MetricsSummary {
    double accuracy_mean = 0, accuracy_std = 0;
    double f1_mean = 0, f1_std = 0;
    double mcc_mean = 0, mcc_std = 0;
    double auroc_mean = 0, auroc_std = 0;
    double auprc_mean = 0, auprc_std = 0;
    int folds = 0;
};

/// Mean and sample (n-1) standard deviation per metric; a single report
/// yields zero deviation.
inline MetricsSummary aggregate_folds(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw config_error("aggregate_folds: no reports");
    auto stat = [&](auto get, double& mean, double& sd) {
        double sum = 0.0;
        for (const auto& r : reports) sum += get(r);
        mean = sum / static_cast<double>(reports.size());
        if (reports.size() < 2) {
            sd = 0.0;
            return;
        }
        double ss = 0.0;
        for (const auto& r : reports) ss += (get(r) - mean) * (get(r) - mean);
        sd = std::sqrt(ss / static_cast<double>(reports.size() - 1));
    };
    MetricsSummary s;
    s.folds = static_cast<int>(reports.size());
    stat([](const MetricsReport& r) { return r.accuracy; }, s.accuracy_mean, s.accuracy_std);
    stat([](const MetricsReport& r) { return r.f1; }, s.f1_mean, s.f1_std);
    stat([](const MetricsReport& r) { return r.mcc; }, s.mcc_mean, s.mcc_std);
    stat([](const MetricsReport& r) { return r.auroc; }, s.auroc_mean, s.auroc_std);
    stat([](const MetricsReport& r) { return r.auprc; }, s.auprc_mean, s.auprc_std);
    return s;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["accuracy"] = r.accuracy;
    j["f1"] = r.f1;
    j["mcc"] = r.mcc;
    if (r.auc_defined) {
        j["auroc"] = r.auroc;
        j["auprc"] = r.auprc;
    } else {
        j["auroc"] = nullptr;
        j["auprc"] = nullptr;
    }
    j["auc_defined"] = r.auc_defined;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["tn"] = r.tn;
    j["fn"] = r.fn;
    j["n_samples"] = r.n_samples;
    return j;
}

inline std::string metrics_csv_header() {
    return "accuracy,f1,mcc,auroc,auprc,auc_defined,tp,fp,tn,fn,n_samples";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
    return fmt_double(r.accuracy) + "," + fmt_double(r.f1) + "," + fmt_double(r.mcc) + "," +
           (r.auc_defined ? fmt_double(r.auroc) : "") + "," +
           (r.auc_defined ? fmt_double(r.auprc) : "") + "," +
           (r.auc_defined ? "1" : "0") + "," + std::to_string(r.tp) + "," +
           std::to_string(r.fp) + "," + std::to_string(r.tn) + "," + std::to_string(r.fn) +
           "," + std::to_string(r.n_samples);
}

}  // namespace cmkn
