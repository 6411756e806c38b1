#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmkn/common.hpp"
#include "cmkn/network.hpp"

namespace cmkn {

/// Per-class position importance of a trained model. `neuron_values` holds
/// the per-anchor contribution at every kernel-layer column; `values` is the
/// per-position mean and `normalized` the mean-subtracted variant used for
/// display.
struct PositionImportance {
    int class_index = 0;
    Eigen::MatrixXd neuron_values;  // n x P
    Eigen::VectorXd values;         // P
    Eigen::VectorXd normalized;     // P, sums to ~0
};

/// Importance of every sequence position for class c, backed by the learned
/// head weights: the value of a kernel-layer neuron is the sum over all
/// positive-weight paths to the class output of the product of the weights
/// along the path; the importance of a position is the mean over its anchors.
/// For a single-logit binary head, class 1 reads the output edge weights as
/// they are and class 0 with flipped sign.
inline PositionImportance position_importance(const CmknModel& model, int c) {
    model.validate();
    if (c < 0 || c >= model.num_classes()) throw config_error("class index out of range");
    const int n = model.anchors.count();
    const int P = model.positions();

    const DenseLayer& last = model.dense.back();
    Eigen::VectorXd v;
    if (model.loss == LossKind::bce_logits) {
        const double sign = c == 1 ? 1.0 : -1.0;
        v = (sign * last.weights.row(0).transpose()).cwiseMax(0.0);
    } else {
        v = last.weights.row(c).transpose().cwiseMax(0.0);
    }
    for (int l = static_cast<int>(model.dense.size()) - 2; l >= 0; --l) {
        const Eigen::MatrixXd& w = model.dense[l].weights;  // out x in
        Eigen::VectorXd next = Eigen::VectorXd::Zero(w.cols());
        for (int j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (int i = 0; i < w.rows(); ++i)
                if (w(i, j) > 0.0) acc += w(i, j) * v(i);
            next(j) = acc;
        }
        v = std::move(next);
    }

    PositionImportance imp;
    imp.class_index = c;
    imp.neuron_values = unflatten_features(v, n, P);
    imp.values = imp.neuron_values.colwise().mean().transpose();
    imp.normalized = imp.values.array() - imp.values.mean();
    return imp;
}

struct Peak {
    int position = 0;  // 1-based sequence position
    double score = 0.0;
};

/// Sliding-window peak scores: importance minus the mean over an odd window
/// centered at each position (truncated at the edges), ranked descending.
inline std::vector<Peak> detect_peaks(const Eigen::VectorXd& importance, int window) {
    const int P = static_cast<int>(importance.size());
    if (window < 1 || window % 2 == 0) throw config_error("window must be odd and >= 1");
    if (window > P) throw config_error("window exceeds the number of positions");
    const int h = window / 2;
    std::vector<Peak> peaks(P);
    for (int p = 0; p < P; ++p) {
        const int lo = std::max(0, p - h);
        const int hi = std::min(P - 1, p + h);
        const double mean = importance.segment(lo, hi - lo + 1).mean();
        peaks[p] = {p + 1, importance(p) - mean};
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.position < b.position;
    });
    return peaks;
}

struct MeanMotif {
    Eigen::MatrixXd matrix;  // |A| x k, unit-norm columns
    int position = 0;        // 1-based
    int class_index = 0;
    std::vector<int> anchor_indices;
    std::vector<double> weights;
    bool empty = false;
};

/// Weighted mean of the anchor motifs that contribute positive importance at
/// (position, class), columns renormalized; flagged empty when no anchor
/// contributes.
inline MeanMotif mean_motif_at(const CmknModel& model, const PositionImportance& imp,
                               int position) {
    const int P = model.positions();
    if (position < 1 || position > P)
        throw config_error(strf("position %d out of range [1, %d]", position, P));
    const int A = model.alphabet.size();
    MeanMotif mm;
    mm.position = position;
    mm.class_index = imp.class_index;

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(model.anchors.motif_dim());
    double total = 0.0;
    for (int i = 0; i < model.anchors.count(); ++i) {
        const double w = imp.neuron_values(i, position - 1);
        if (w > 0.0) {
            mm.anchor_indices.push_back(i);
            mm.weights.push_back(w);
            acc += w * model.anchors.motifs.row(i).transpose();
            total += w;
        }
    }
    if (total <= 0.0) {
        mm.empty = true;
        mm.matrix = Eigen::MatrixXd::Zero(A, model.params.k);
        return mm;
    }
    acc /= total;
    mm.matrix = unflatten_npfm(acc, A);
    for (int j = 0; j < mm.matrix.cols(); ++j) {
        const double norm = mm.matrix.col(j).norm();
        if (norm > 0.0) mm.matrix.col(j) /= norm;
    }
    return mm;
}

inline MeanMotif mean_motif_at(const CmknModel& model, int position, int c) {
    return mean_motif_at(model, position_importance(model, c), position);
}

/// Letters of one motif column ranked by decreasing weight; ties keep
/// alphabet order.
inline std::vector<char> ranked_letters(const Eigen::MatrixXd& motif, int column,
                                        const Alphabet& alphabet) {
    std::vector<int> idx(motif.rows());
    for (int i = 0; i < motif.rows(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return motif(a, column) > motif(b, column);
    });
    std::vector<char> out;
    for (int i : idx) out.push_back(alphabet.symbols[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Local interpretation
// ---------------------------------------------------------------------------

struct LocalEntry {
    int position = 0;             // 1-based
    std::string letters;          // input window content at the position
    std::vector<double> raw;      // per-class motif-function norm
    std::vector<double> scaled;   // raw / max over classes, in [0, 1]
    int assigned_class = -1;
    bool tie = false;
    bool skipped = false;
};

struct LocalReport {
    std::string id;
    std::vector<LocalEntry> entries;
};

/// Per-input interpretation: at each requested position, the class mean
/// motifs are scored by the l2-norm of their K0 responses over every input
/// window; scores are scaled per position by the max over classes and the
/// argmax class is assigned (ties resolve to the lower class index and are
/// flagged). Positions whose mean motif is empty for some class are skipped.
inline LocalReport local_report(const CmknModel& model, const EncodedSequence& x,
                                const std::vector<int>& positions) {
    if (x.length() != model.seq_length)
        throw config_error("local_report: input length does not match the model");
    const int C = model.num_classes();
    const int P = model.positions();
    const int k = model.params.k;

    std::vector<PositionImportance> imps;
    for (int c = 0; c < C; ++c) imps.push_back(position_importance(model, c));

    const Eigen::MatrixXd wins = window_matrix(x, k);  // P x D
    std::vector<CirclePoint> wpos(P);
    for (int q = 0; q < P; ++q) wpos[q] = map_position(q + 1, x.length());

    LocalReport report;
    report.id = x.id;
    for (int p : positions) {
        LocalEntry entry;
        entry.position = p;
        entry.letters = x.raw.substr(p - 1, k);

        std::vector<MeanMotif> motifs;
        bool any_empty = false;
        for (int c = 0; c < C; ++c) {
            motifs.push_back(mean_motif_at(model, imps[c], p));
            any_empty |= motifs.back().empty;
        }
        if (any_empty) {
            entry.skipped = true;
            report.entries.push_back(std::move(entry));
            continue;
        }

        const CirclePoint pt = map_position(p, model.seq_length);
        entry.raw.resize(C);
        for (int c = 0; c < C; ++c) {
            const Eigen::VectorXd mu = flatten_npfm(motifs[c].matrix);
            double ss = 0.0;
            for (int q = 0; q < P; ++q) {
                const double v =
                    k0_fused(mu.dot(wins.row(q).transpose()), pt.dot(wpos[q]), model.params);
                ss += v * v;
            }
            entry.raw[c] = std::sqrt(ss);
        }
        const double maxr = *std::max_element(entry.raw.begin(), entry.raw.end());
        if (maxr <= 0.0) {
            entry.skipped = true;
            report.entries.push_back(std::move(entry));
            continue;
        }
        entry.scaled.resize(C);
        for (int c = 0; c < C; ++c) entry.scaled[c] = entry.raw[c] / maxr;
        entry.assigned_class =
            static_cast<int>(std::max_element(entry.raw.begin(), entry.raw.end()) -
                             entry.raw.begin());
        entry.tie = std::count(entry.raw.begin(), entry.raw.end(), maxr) > 1;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Logo rendering
// ---------------------------------------------------------------------------

inline const char* logo_color(char letter) {
    switch (letter) {
        case 'A': return "#109648";
        case 'C': return "#255c99";
        case 'G': return "#f7b32b";
        case 'T': case 'U': return "#d62839";
        case 'D': case 'E': return "#d62839";
        case 'K': case 'R': case 'H': return "#255c99";
        case 'S': case 'N': case 'Q': return "#109648";
        case 'F': case 'W': case 'Y': return "#7b4fa3";
        default: return "#404040";
    }
}

/// Standalone SVG motif logo: one letter stack per column with heights
/// proportional to the squared nPFM entries (so each stack sums to 1),
/// letters sorted descending. Output bytes are deterministic.
inline std::string emit_logo(const Eigen::MatrixXd& motif, const Alphabet& alphabet) {
    if (motif.rows() != alphabet.size())
        throw config_error("emit_logo: motif rows do not match the alphabet");
    const int k = static_cast<int>(motif.cols());
    const double col_w = 48.0;
    const double stack_h = 180.0;
    const double margin = 12.0;
    const double width = margin * 2 + col_w * k;
    const double height = margin * 2 + stack_h + 18.0;

    std::string svg;
    svg += strf(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
        "viewBox=\"0 0 %.0f %.0f\">\n",
        width, height, width, height);
    svg += strf(
        "<rect x=\"0\" y=\"0\" width=\"%.0f\" height=\"%.0f\" fill=\"#ffffff\"/>\n", width,
        height);
    for (int j = 0; j < k; ++j) {
        std::vector<int> idx(motif.rows());
        for (int i = 0; i < motif.rows(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int a, int b) { return motif(a, j) > motif(b, j); });
        double y = margin;
        const double x = margin + col_w * j;
        for (int i : idx) {
            const double frac = motif(i, j) * motif(i, j);
            if (frac < 1e-4) continue;
            const double h = frac * stack_h;
            const char letter = alphabet.symbols[i];
            // Glyph box: font-size 100 at scale 1 is ~72 units tall; scale to h.
            svg += strf(
                "<text x=\"0\" y=\"0\" font-family=\"monospace\" font-size=\"100\" "
                "font-weight=\"bold\" fill=\"%s\" transform=\"translate(%.4f,%.4f) "
                "scale(%.6f,%.6f)\">%c</text>\n",
                logo_color(letter), x, y + h, col_w / 62.0, h / 72.0, letter);
            y += h;
        }
        svg += strf(
            "<text x=\"%.4f\" y=\"%.4f\" font-family=\"monospace\" font-size=\"12\" "
            "fill=\"#404040\">%d</text>\n",
            x + col_w * 0.4, margin + stack_h + 14.0, j + 1);
    }
    svg += "</svg>\n";
    return svg;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

struct GlobalReport {
    int window = 11;
    int top = 10;
    std::vector<PositionImportance> importances;      // one per class
    std::vector<std::vector<Peak>> peaks;             // ranked, one list per class
    std::vector<std::vector<MeanMotif>> peak_motifs;  // aligned with top peaks
};

/// Full global interpretation: importances, top peaks and their mean motifs
/// for every class.
inline GlobalReport global_report(const CmknModel& model, int window = 11, int top = 10) {
    GlobalReport rep;
    rep.window = window;
    rep.top = top;
    for (int c = 0; c < model.num_classes(); ++c) {
        PositionImportance imp = position_importance(model, c);
        auto ranked = detect_peaks(imp.values, window);
        std::vector<MeanMotif> motifs;
        const int take = std::min<int>(top, static_cast<int>(ranked.size()));
        for (int r = 0; r < take; ++r)
            motifs.push_back(mean_motif_at(model, imp, ranked[r].position));
        rep.importances.push_back(std::move(imp));
        rep.peaks.push_back(std::move(ranked));
        rep.peak_motifs.push_back(std::move(motifs));
    }
    return rep;
}

inline nlohmann::json global_report_to_json(const CmknModel& model, const GlobalReport& rep) {
    nlohmann::json j;
    j["window"] = rep.window;
    j["top"] = rep.top;
    j["classes"] = nlohmann::json::object();
    for (int c = 0; c < model.num_classes(); ++c) {
        nlohmann::json jc;
        jc["importance"] = std::vector<double>(
            rep.importances[c].values.data(),
            rep.importances[c].values.data() + rep.importances[c].values.size());
        jc["normalized_importance"] = std::vector<double>(
            rep.importances[c].normalized.data(),
            rep.importances[c].normalized.data() + rep.importances[c].normalized.size());
        jc["peaks"] = nlohmann::json::array();
        for (std::size_t r = 0; r < rep.peak_motifs[c].size(); ++r) {
            const Peak& pk = rep.peaks[c][r];
            const MeanMotif& mm = rep.peak_motifs[c][r];
            nlohmann::json jp;
            jp["position"] = pk.position;
            jp["score"] = pk.score;
            jp["empty"] = mm.empty;
            jp["mean_motif"] = nlohmann::json::array();
            for (int row = 0; row < mm.matrix.rows(); ++row) {
                nlohmann::json jrow = nlohmann::json::array();
                for (int col = 0; col < mm.matrix.cols(); ++col)
                    jrow.push_back(mm.matrix(row, col));
                jp["mean_motif"].push_back(jrow);
            }
            jp["top_letters"] = nlohmann::json::array();
            for (int col = 0; col < mm.matrix.cols(); ++col) {
                const auto letters = ranked_letters(mm.matrix, col, model.alphabet);
                nlohmann::json jl = nlohmann::json::array();
                for (int t = 0; t < 2 && t < static_cast<int>(letters.size()); ++t)
                    jl.push_back(std::string(1, letters[t]));
                jp["top_letters"].push_back(jl);
            }
            jc["peaks"].push_back(jp);
        }
        j["classes"][model.class_names[c]] = jc;
    }
    return j;
}

inline std::string global_report_to_csv(const CmknModel& model, const GlobalReport& rep) {
    std::string csv = "class,position,importance,normalized_importance,peak_rank,peak_score\n";
    for (int c = 0; c < model.num_classes(); ++c) {
        std::map<int, std::pair<int, double>> rank_at;  // position -> (rank, score)
        for (std::size_t r = 0; r < rep.peak_motifs[c].size(); ++r)
            rank_at[rep.peaks[c][r].position] = {static_cast<int>(r) + 1,
                                                 rep.peaks[c][r].score};
        const auto& imp = rep.importances[c];
        for (int p = 0; p < imp.values.size(); ++p) {
            csv += model.class_names[c] + "," + std::to_string(p + 1) + "," +
                   fmt_double(imp.values(p)) + "," + fmt_double(imp.normalized(p)) + ",";
            const auto it = rank_at.find(p + 1);
            if (it != rank_at.end())
                csv += std::to_string(it->second.first) + "," + fmt_double(it->second.second);
            else
                csv += ",";
            csv += "\n";
        }
    }
    return csv;
}

inline nlohmann::json local_report_to_json(const CmknModel& model, const LocalReport& rep) {
    nlohmann::json j;
    j["id"] = rep.id;
    j["positions"] = nlohmann::json::array();
    for (const auto& e : rep.entries) {
        nlohmann::json je;
        je["position"] = e.position;
        je["letters"] = e.letters;
        je["skipped"] = e.skipped;
        if (!e.skipped) {
            je["scores"] = nlohmann::json::object();
            for (int c = 0; c < model.num_classes(); ++c)
                je["scores"][model.class_names[c]] = e.scaled[c];
            je["assigned_class"] = model.class_names[e.assigned_class];
            je["tie"] = e.tie;
        }
        j["positions"].push_back(je);
    }
    return j;
}

}  // namespace cmkn
