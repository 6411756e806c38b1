#pragma once

#include <algorithm>
#include <thread>
#include <utility>
#include <vector>

#include "cmkn/common.hpp"
#include "cmkn/metrics.hpp"
#include "cmkn/network.hpp"
#include "cmkn/seqdata.hpp"

namespace cmkn {

struct GridPoint {
    double sigma = 1.0;
    int anchors = 50;
};

struct GridResult {
    GridPoint point;
    std::vector<MetricsReport> fold_reports;
    MetricsSummary summary;
    std::uint64_t fold_hash = 0;  // hash of the splits this point was trained on
    int wins = 0;                 // how many of the four measures it maximizes
};

struct CvOutcome {
    std::vector<GridResult> results;
    std::vector<std::pair<std::vector<int>, std::vector<int>>> folds;
    int best_index = 0;
};

inline std::uint64_t hash_folds(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& folds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [train, val] : folds) {
        for (int i : train) h = fnv1a64(&i, sizeof(i), h);
        const int sep = -1;
        h = fnv1a64(&sep, sizeof(sep), h);
        for (int i : val) h = fnv1a64(&i, sizeof(i), h);
    }
    return h;
}

/// Codifies the selection rule: the grid point that maximizes the most of
/// accuracy, F1, auROC and MCC wins; ties break by higher MCC, then fewer
/// anchors, then grid order. Returns the winning index and fills `wins`.
inline int select_best(std::vector<GridResult>& results) {
    if (results.empty()) throw config_error("select_best: empty grid");
    auto metric = [](const GridResult& r, int m) {
        switch (m) {
            case 0: return r.summary.accuracy_mean;
            case 1: return r.summary.f1_mean;
            case 2: return r.summary.auroc_mean;
            default: return r.summary.mcc_mean;
        }
    };
    for (auto& r : results) r.wins = 0;
    for (int m = 0; m < 4; ++m) {
        double best = metric(results[0], m);
        for (const auto& r : results) best = std::max(best, metric(r, m));
        for (auto& r : results)
            if (metric(r, m) == best) ++r.wins;
    }
    int best = 0;
    for (int i = 1; i < static_cast<int>(results.size()); ++i) {
        const auto& a = results[i];
        const auto& b = results[best];
        if (a.wins != b.wins) {
            if (a.wins > b.wins) best = i;
        } else if (a.summary.mcc_mean != b.summary.mcc_mean) {
            if (a.summary.mcc_mean > b.summary.mcc_mean) best = i;
        } else if (a.point.anchors < b.point.anchors) {
            best = i;
        }
    }
    return best;
}

/// Stratified cross-validation over a (sigma, anchor count) grid. The fold
/// splits are computed once and reused for every grid point; per-fold
/// training runs are independent and may be distributed over threads.
inline CvOutcome run_cv(const LabeledDataset& ds, const KernelParams& base_kernel,
                        const std::vector<int>& hidden, int sample_m, const TrainConfig& tc,
                        const std::vector<double>& sigma_grid,
                        const std::vector<int>& anchor_grid, int folds, double threshold,
                        std::uint64_t seed, int threads = 1) {
    if (sigma_grid.empty() || anchor_grid.empty())
        throw config_error("run_cv: empty grid");
    CvOutcome out;
    out.folds = stratified_kfold(ds, folds, seed);
    const std::uint64_t fold_hash = hash_folds(out.folds);

    std::vector<GridPoint> points;
    for (double s : sigma_grid)
        for (int a : anchor_grid) points.push_back({s, a});

    out.results.resize(points.size());
    for (std::size_t gp = 0; gp < points.size(); ++gp) {
        const GridPoint& point = points[gp];
        const KernelParams params(base_kernel.k, base_kernel.alpha, base_kernel.beta,
                                  point.sigma);
        GridResult& res = out.results[gp];
        res.point = point;
        res.fold_hash = hash_folds(out.folds);
        if (res.fold_hash != fold_hash)
            throw numeric_error("fold splits changed between grid points");
        res.fold_reports.resize(folds);

        auto run_fold = [&](int f) {
            const LabeledDataset train_ds = subset(ds, out.folds[f].first);
            const LabeledDataset val_ds = subset(ds, out.folds[f].second);
            ModelConfig mc;
            mc.kernel = params;
            mc.n_anchors = point.anchors;
            mc.sample_m = sample_m;
            mc.hidden = hidden;
            TrainConfig fold_tc = tc;
            fold_tc.seed = SplitRng::mix(seed ^ SplitRng::mix(gp * 1000ULL + f));
            auto [model, history] = train(train_ds, mc, fold_tc, SplitRng(fold_tc.seed));
            std::vector<int> labels;
            std::vector<double> scores;
            for (const auto& s : val_ds.sequences) {
                labels.push_back(s.label);
                scores.push_back(score_positive(model, s));
            }
            res.fold_reports[f] = compute_metrics(labels, scores, threshold);
        };

        if (threads <= 1) {
            for (int f = 0; f < folds; ++f) run_fold(f);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; ++t)
                pool.emplace_back([&, t] {
                    for (int f = t; f < folds; f += threads) run_fold(f);
                });
            for (auto& th : pool) th.join();
        }
        res.summary = aggregate_folds(res.fold_reports);
    }
    out.best_index = select_best(out.results);
    return out;
}

}  // namespace cmkn
