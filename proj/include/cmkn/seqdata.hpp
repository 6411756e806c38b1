#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmkn/alphabet.hpp"
#include "cmkn/common.hpp"

namespace cmkn {

/// A sequence position mapped onto the upper half of the unit circle.
struct CirclePoint {
    double x = 1.0;
    double y = 0.0;

    double dot(const CirclePoint& o) const { return x * o.x + y * o.y; }
};

/// Maps 1-based position p of a length-L sequence to (cos(p pi / L), sin(p pi / L)).
inline CirclePoint map_position(int p, int L) {
    if (L < 1) throw config_error("sequence length must be positive");
    if (p < 1 || p > L)
        throw config_error(strf("position %d out of range [1, %d]", p, L));
    const double angle = 3.14159265358979323846 * static_cast<double>(p) /
                         static_cast<double>(L);
    return {std::cos(angle), std::sin(angle)};
}

inline int window_count(int L, int k) { return L - k + 1; }

/// Flattened motif window of length k starting at 1-based position p:
/// columns p..p+k-1 concatenated. Valid windows only, no padding.
inline Eigen::VectorXd extract_window(const EncodedSequence& seq, int p, int k) {
    const int L = seq.length();
    if (k < 1) throw config_error("motif length must be >= 1");
    if (p < 1 || p > L - k + 1)
        throw config_error(
            strf("window start %d out of range [1, %d] (L=%d, k=%d)", p, L - k + 1, L, k));
    const int A = static_cast<int>(seq.matrix.rows());
    Eigen::VectorXd w(A * k);
    for (int j = 0; j < k; ++j) w.segment(j * A, A) = seq.matrix.col(p - 1 + j);
    return w;
}

/// All valid windows of a sequence as rows of a (L-k+1) x (|A|k) matrix.
inline Eigen::MatrixXd window_matrix(const EncodedSequence& seq, int k) {
    const int L = seq.length();
    if (L < k) throw config_error(strf("sequence of length %d shorter than k=%d", L, k));
    const int A = static_cast<int>(seq.matrix.rows());
    const int P = window_count(L, k);
    Eigen::MatrixXd W(P, A * k);
    for (int p = 0; p < P; ++p)
        for (int j = 0; j < k; ++j)
            W.row(p).segment(j * A, A) = seq.matrix.col(p + j).transpose();
    return W;
}

/// Normalized position frequency matrix from equal-length flattened windows:
/// per-column symbol counts divided by the column's l2 norm.
inline Eigen::MatrixXd build_npfm(const std::vector<Eigen::VectorXd>& windows, int alphabet_size) {
    if (windows.empty()) throw config_error("build_npfm requires at least one window");
    const int A = alphabet_size;
    const auto dim = windows.front().size();
    if (dim % A != 0)
        throw config_error("window length is not a multiple of the alphabet size");
    const int k = static_cast<int>(dim / A);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(A, k);
    for (const auto& w : windows) {
        if (w.size() != dim) throw config_error("windows differ in length");
        for (int j = 0; j < k; ++j) counts.col(j) += w.segment(j * A, A);
    }
    for (int j = 0; j < k; ++j) {
        const double norm = counts.col(j).norm();
        if (norm > 0.0) counts.col(j) /= norm;
    }
    return counts;
}

inline void validate_npfm(const Eigen::MatrixXd& m, double tol = 1e-9) {
    if (m.minCoeff() < -tol) throw config_error("nPFM has negative entries");
    for (int j = 0; j < m.cols(); ++j)
        if (std::abs(m.col(j).norm() - 1.0) > tol)
            throw config_error(strf("nPFM column %d is not unit-norm", j + 1));
}

inline Eigen::VectorXd flatten_npfm(const Eigen::MatrixXd& m) {
    Eigen::VectorXd v(m.size());
    for (int j = 0; j < m.cols(); ++j) v.segment(j * m.rows(), m.rows()) = m.col(j);
    return v;
}

inline Eigen::MatrixXd unflatten_npfm(const Eigen::VectorXd& v, int alphabet_size) {
    if (v.size() % alphabet_size != 0)
        throw config_error("flattened motif length is not a multiple of |A|");
    const int k = static_cast<int>(v.size() / alphabet_size);
    Eigen::MatrixXd m(alphabet_size, k);
    for (int j = 0; j < k; ++j) m.col(j) = v.segment(j * alphabet_size, alphabet_size);
    return m;
}

struct LabeledDataset {
    std::vector<EncodedSequence> sequences;
    std::vector<std::string> class_names;
    Alphabet alphabet;

    int num_classes() const { return static_cast<int>(class_names.size()); }

    std::vector<int> class_counts() const {
        std::vector<int> counts(class_names.size(), 0);
        for (const auto& s : sequences) {
            if (s.label < 0 || s.label >= static_cast<int>(counts.size()))
                throw data_error(strf("sequence '%s' has label outside [0, %zu)",
                                      s.id.c_str(), counts.size()));
            ++counts[s.label];
        }
        return counts;
    }
};

// ---------------------------------------------------------------------------
// FASTA
// ---------------------------------------------------------------------------

/// Parses FASTA text with headers ">id label=<int>"; the label is optional
/// when labels_required is false. Multi-line bodies are joined.
inline LabeledDataset parse_fasta(const std::string& text, const Alphabet& alphabet,
                                  bool labels_required = true,
                                  std::vector<std::string> class_names = {}) {
    LabeledDataset ds;
    ds.alphabet = alphabet;
    std::istringstream in(text);
    std::string line, id, body;
    int label = -1;
    int max_label = -1;
    bool in_record = false;

    auto finish = [&] {
        if (!in_record) return;
        if (body.empty()) throw data_error("record '" + id + "' has an empty sequence");
        ds.sequences.push_back(encode_sequence(body, alphabet, id, label));
        max_label = std::max(max_label, label);
        body.clear();
    };

    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '>') {
            finish();
            in_record = true;
            std::istringstream hdr(line.substr(1));
            if (!(hdr >> id) || id.empty())
                throw data_error(strf("line %zu: FASTA header without an id", lineno));
            label = -1;
            std::string tok;
            while (hdr >> tok) {
                if (tok.rfind("label=", 0) == 0) {
                    try {
                        std::size_t used = 0;
                        label = std::stoi(tok.substr(6), &used);
                        if (used != tok.size() - 6) throw std::invalid_argument("trail");
                    } catch (const std::exception&) {
                        throw data_error(strf("line %zu: malformed label '%s'", lineno,
                                              tok.c_str()));
                    }
                    if (label < 0)
                        throw data_error(strf("line %zu: negative label", lineno));
                }
            }
            if (labels_required && label < 0)
                throw data_error("record '" + id + "' is missing a label= field");
        } else {
            if (!in_record)
                throw data_error(strf("line %zu: sequence data before any header", lineno));
            body += line;
        }
    }
    finish();

    if (!class_names.empty()) {
        ds.class_names = std::move(class_names);
    } else {
        for (int c = 0; c <= max_label; ++c) ds.class_names.push_back(strf("class%d", c));
    }
    for (const auto& s : ds.sequences)
        if (s.label >= static_cast<int>(ds.class_names.size()))
            throw data_error(strf("label %d exceeds the declared class count", s.label));
    return ds;
}

/// Writes FASTA with 80-column body wrap; labels are emitted when present.
inline std::string write_fasta(const LabeledDataset& ds) {
    std::string out;
    for (const auto& s : ds.sequences) {
        out += '>';
        out += s.id;
        if (s.label >= 0) out += strf(" label=%d", s.label);
        out += '\n';
        for (std::size_t i = 0; i < s.raw.size(); i += 80) {
            out += s.raw.substr(i, 80);
            out += '\n';
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct ClassMotifSpec {
    std::string name;
    int center = 1;   // 1-based start position where the motif is written
    int jitter = 0;   // uniform integer offset in [-jitter, +jitter]
    std::vector<std::map<char, double>> consensus;  // one distribution per motif column

    bool operator==(const ClassMotifSpec&) const = default;
};

struct SyntheticConfig {
    int num_sequences = 1000;
    int sequence_length = 100;
    int motif_length = 5;
    std::string alphabet = "dna";
    std::vector<ClassMotifSpec> classes;

    bool operator==(const SyntheticConfig&) const = default;

    void validate() const {
        if (num_sequences < 1) throw config_error("num_sequences must be >= 1");
        if (motif_length < 1) throw config_error("motif_length must be >= 1");
        if (sequence_length < motif_length)
            throw config_error("sequence_length must be >= motif_length");
        if (classes.size() < 2) throw config_error("need at least 2 classes");
        const Alphabet a = Alphabet::by_name(alphabet);
        for (const auto& cls : classes) {
            if (static_cast<int>(cls.consensus.size()) != motif_length)
                throw config_error("class '" + cls.name +
                                   "': consensus length differs from motif_length");
            if (cls.jitter < 0) throw config_error("jitter must be >= 0");
            if (cls.center - cls.jitter < 1 ||
                cls.center + cls.jitter > sequence_length - motif_length + 1)
                throw config_error("class '" + cls.name +
                                   "': center +- jitter leaves the valid window range");
            for (const auto& dist : cls.consensus) {
                double total = 0.0;
                for (const auto& [sym, prob] : dist) {
                    if (a.index_of(sym) < 0)
                        throw config_error(strf("consensus symbol '%c' not in alphabet", sym));
                    if (prob < 0.0) throw config_error("negative consensus probability");
                    total += prob;
                }
                if (std::abs(total - 1.0) > 1e-9)
                    throw config_error("consensus distribution does not sum to 1");
            }
        }
    }
};

/// The default experiment configuration: 1000 DNA sequences of length 100,
/// a 5-column motif written at position 20 (class 0) and 80 (class 1), both
/// with +-5 positional jitter and mixed-letter columns.
inline SyntheticConfig default_synthetic_config() {
    SyntheticConfig cfg;
    const double two_thirds = 2.0 / 3.0;
    const double one_third = 1.0 / 3.0;
    cfg.classes = {
        {"negative", 20, 5,
         {{{'T', 1.0}},
          {{'C', two_thirds}, {'T', one_third}},
          {{'G', 1.0}},
          {{'C', 1.0}},
          {{'A', 1.0}}}},
        {"positive", 80, 5,
         {{{'G', 1.0}},
          {{'A', two_thirds}, {'T', one_third}},
          {{'T', 1.0}},
          {{'A', 1.0}},
          {{'C', two_thirds}, {'G', one_third}}}},
    };
    return cfg;
}

inline nlohmann::json synthetic_config_to_json(const SyntheticConfig& cfg) {
    nlohmann::json j;
    j["num_sequences"] = cfg.num_sequences;
    j["sequence_length"] = cfg.sequence_length;
    j["motif_length"] = cfg.motif_length;
    j["alphabet"] = cfg.alphabet;
    j["classes"] = nlohmann::json::array();
    for (const auto& cls : cfg.classes) {
        nlohmann::json c;
        c["name"] = cls.name;
        c["center"] = cls.center;
        c["jitter"] = cls.jitter;
        c["consensus"] = nlohmann::json::array();
        for (const auto& dist : cls.consensus) {
            nlohmann::json d = nlohmann::json::object();
            for (const auto& [sym, prob] : dist) d[std::string(1, sym)] = prob;
            c["consensus"].push_back(d);
        }
        j["classes"].push_back(c);
    }
    return j;
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig cfg;
    try {
        cfg.num_sequences = j.at("num_sequences").get<int>();
        cfg.sequence_length = j.at("sequence_length").get<int>();
        cfg.motif_length = j.at("motif_length").get<int>();
        cfg.alphabet = j.at("alphabet").get<std::string>();
        for (const auto& c : j.at("classes")) {
            ClassMotifSpec cls;
            cls.name = c.at("name").get<std::string>();
            cls.center = c.at("center").get<int>();
            cls.jitter = c.at("jitter").get<int>();
            for (const auto& d : c.at("consensus")) {
                std::map<char, double> dist;
                for (auto it = d.begin(); it != d.end(); ++it) {
                    if (it.key().size() != 1)
                        throw config_error("consensus keys must be single symbols");
                    dist[it.key()[0]] = it.value().get<double>();
                }
                cls.consensus.push_back(std::move(dist));
            }
            cfg.classes.push_back(std::move(cls));
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("synthetic config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

/// Generates balanced labeled sequences: i.i.d. uniform background letters
/// with one class motif sampled column-wise from the class consensus and
/// written at center + uniform offset in [-jitter, +jitter].
inline LabeledDataset generate_synthetic(const SyntheticConfig& cfg, SplitRng& rng) {
    cfg.validate();
    const Alphabet alphabet = Alphabet::by_name(cfg.alphabet);
    const int C = static_cast<int>(cfg.classes.size());

    // Balanced labels, interleaved while per-class quotas remain.
    std::vector<int> quota(C, cfg.num_sequences / C);
    for (int c = 0; c < cfg.num_sequences % C; ++c) ++quota[c];

    auto sample_symbol = [&](const std::map<char, double>& dist, double u) {
        double acc = 0.0;
        char last = dist.begin()->first;
        for (const auto& [sym, prob] : dist) {
            acc += prob;
            last = sym;
            if (u < acc) return sym;
        }
        return last;
    };

    LabeledDataset ds;
    ds.alphabet = alphabet;
    for (const auto& cls : cfg.classes) ds.class_names.push_back(cls.name);

    int next_class = 0;
    for (int i = 0; i < cfg.num_sequences; ++i) {
        while (quota[next_class] == 0) next_class = (next_class + 1) % C;
        const int label = next_class;
        --quota[label];
        next_class = (next_class + 1) % C;

        std::string raw(cfg.sequence_length, '?');
        for (int p = 0; p < cfg.sequence_length; ++p)
            raw[p] = alphabet.symbols[rng.next_below(alphabet.symbols.size())];

        const auto& cls = cfg.classes[label];
        const int offset =
            cls.jitter > 0 ? static_cast<int>(rng.next_int(-cls.jitter, cls.jitter)) : 0;
        const int start = cls.center + offset;  // 1-based
        for (int j = 0; j < cfg.motif_length; ++j)
            raw[start - 1 + j] = sample_symbol(cls.consensus[j], rng.next_double());

        ds.sequences.push_back(encode_sequence(raw, alphabet, strf("synth_%04d", i), label));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Resampling and folds
// ---------------------------------------------------------------------------

/// Randomly removes negatives (class 0) until N_pos / N_neg >= ratio, as close
/// as integer counts allow. Positives are untouched; returns the input
/// unchanged when the ratio is already met.
inline LabeledDataset undersample_negatives(const LabeledDataset& ds, double ratio,
                                            SplitRng& rng) {
    if (ds.num_classes() != 2)
        throw config_error("undersample_negatives requires exactly two classes");
    if (ratio < 0.0) throw config_error("ratio must be >= 0");
    const auto counts = ds.class_counts();
    const int n_pos = counts[1];
    const int n_neg = counts[0];
    if (ratio == 0.0 || n_neg == 0 ||
        static_cast<double>(n_pos) / static_cast<double>(n_neg) >= ratio)
        return ds;

    const int keep_neg = std::max(1, static_cast<int>(std::floor(n_pos / ratio)));
    std::vector<int> neg_indices;
    for (int i = 0; i < static_cast<int>(ds.sequences.size()); ++i)
        if (ds.sequences[i].label == 0) neg_indices.push_back(i);
    // Fisher-Yates prefix of size keep_neg.
    for (int i = 0; i < keep_neg; ++i) {
        const int j = i + static_cast<int>(rng.next_below(neg_indices.size() - i));
        std::swap(neg_indices[i], neg_indices[j]);
    }
    neg_indices.resize(keep_neg);
    std::sort(neg_indices.begin(), neg_indices.end());

    LabeledDataset out;
    out.alphabet = ds.alphabet;
    out.class_names = ds.class_names;
    std::size_t cursor = 0;
    for (int i = 0; i < static_cast<int>(ds.sequences.size()); ++i) {
        if (ds.sequences[i].label == 1) {
            out.sequences.push_back(ds.sequences[i]);
        } else if (cursor < neg_indices.size() && neg_indices[cursor] == i) {
            out.sequences.push_back(ds.sequences[i]);
            ++cursor;
        }
    }
    return out;
}

/// Stratified k-fold split: per-class shuffle, round-robin deal. Returns
/// (train indices, validation indices) per fold; folds partition the index
/// set and per-fold class proportions stay within one sample of global.
inline std::vector<std::pair<std::vector<int>, std::vector<int>>> stratified_kfold(
    const LabeledDataset& ds, int folds, std::uint64_t seed) {
    if (folds < 2) throw config_error("folds must be >= 2");
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < folds)
            throw config_error(strf("class %zu has %d samples, fewer than %d folds", c,
                                    counts[c], folds));

    SplitRng rng(SplitRng::mix(seed ^ 0x5f01dULL));
    std::vector<std::vector<int>> fold_members(folds);
    for (int c = 0; c < static_cast<int>(counts.size()); ++c) {
        std::vector<int> idx;
        for (int i = 0; i < static_cast<int>(ds.sequences.size()); ++i)
            if (ds.sequences[i].label == c) idx.push_back(i);
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.next_below(i)]);
        for (std::size_t i = 0; i < idx.size(); ++i)
            fold_members[i % folds].push_back(idx[i]);
    }

    std::vector<std::pair<std::vector<int>, std::vector<int>>> out(folds);
    for (int f = 0; f < folds; ++f) {
        std::sort(fold_members[f].begin(), fold_members[f].end());
        out[f].second = fold_members[f];
        for (int g = 0; g < folds; ++g)
            if (g != f)
                out[f].first.insert(out[f].first.end(), fold_members[g].begin(),
                                    fold_members[g].end());
        std::sort(out[f].first.begin(), out[f].first.end());
    }
    return out;
}

inline LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& indices) {
    LabeledDataset out;
    out.alphabet = ds.alphabet;
    out.class_names = ds.class_names;
    out.sequences.reserve(indices.size());
    for (int i : indices) out.sequences.push_back(ds.sequences.at(i));
    return out;
}

// ---------------------------------------------------------------------------
// HIVdb conversion
// ---------------------------------------------------------------------------

/// Converts a HIVdb genotype-phenotype table to labeled FASTA. Position
/// columns hold '-' for wildtype or the mutated amino acid(s); the selected
/// drug column holds a fold-resistance value. fold < low maps to class 0
/// (susceptible), fold >= low to class 1 (medium and high resistance merged).
/// Rows with a missing or unparseable fold value, or with cells that encode
/// neither wildtype nor a plain substitution, are skipped.
inline std::string convert_hivdb(const std::string& table, const std::string& reference,
                                 double low, double high, const std::string& drug) {
    if (reference.empty()) throw config_error("empty reference sequence");
    if (low <= 0.0 || high < low)
        throw config_error("thresholds must satisfy 0 < low <= high");

    std::istringstream in(table);
    std::string line;
    if (!std::getline(in, line)) throw data_error("empty HIVdb table");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto split_tabs = [](const std::string& s) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = s.find('\t', start);
            if (tab == std::string::npos) {
                cells.push_back(s.substr(start));
                break;
            }
            cells.push_back(s.substr(start, tab - start));
            start = tab + 1;
        }
        return cells;
    };

    const auto header = split_tabs(line);
    // Position columns are named P1, P2, ... (a bare integer also accepted).
    std::vector<std::pair<int, int>> pos_cols;  // (position, column index)
    int drug_col = -1;
    int id_col = -1;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& h = header[c];
        if (h == drug) drug_col = c;
        if (h == "SeqID" || h == "IsolateName" || h == "ID") id_col = c;
        std::string digits = h;
        if (!digits.empty() && (digits[0] == 'P' || digits[0] == 'p'))
            digits = digits.substr(1);
        if (!digits.empty() &&
            std::all_of(digits.begin(), digits.end(), [](char ch) { return std::isdigit(ch); }))
            pos_cols.emplace_back(std::stoi(digits), c);
    }
    if (drug_col < 0) throw data_error("drug column '" + drug + "' not found");
    if (pos_cols.empty()) throw data_error("no position columns found in header");
    std::sort(pos_cols.begin(), pos_cols.end());
    if (pos_cols.size() != reference.size())
        throw data_error(strf("table has %zu position columns but reference has length %zu",
                              pos_cols.size(), reference.size()));

    std::string fasta;
    int row_no = 0;
    int emitted = 0;
    int skipped = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (static_cast<int>(cells.size()) <= drug_col) {
            ++skipped;
            continue;
        }

        const std::string& fold_str = cells[drug_col];
        double fold = 0.0;
        try {
            std::size_t used = 0;
            fold = std::stod(fold_str, &used);
            if (used != fold_str.size()) throw std::invalid_argument("trail");
        } catch (const std::exception&) {
            ++skipped;  // missing or unparseable fold value for this drug
            continue;
        }

        std::string seq = reference;
        bool ok = true;
        for (const auto& [pos, col] : pos_cols) {
            if (col >= static_cast<int>(cells.size())) {
                ok = false;
                break;
            }
            const std::string& cell = cells[col];
            if (cell.empty() || cell == "-") continue;  // wildtype
            if (std::all_of(cell.begin(), cell.end(),
                            [](char ch) { return std::isalpha(ch); })) {
                // A mixture cell lists several amino acids; keep the first.
                seq[pos - 1] = static_cast<char>(std::toupper(cell[0]));
            } else {
                ok = false;  // insertion/deletion or unknown marker
                break;
            }
        }
        if (!ok) {
            ++skipped;
            continue;
        }

        const int label = fold < low ? 0 : 1;
        std::string id = (id_col >= 0 && id_col < static_cast<int>(cells.size()) &&
                          !cells[id_col].empty())
                             ? cells[id_col]
                             : strf("row%d", row_no);
        fasta += '>';
        fasta += id;
        fasta += strf(" label=%d\n", label);
        for (std::size_t i = 0; i < seq.size(); i += 80) {
            fasta += seq.substr(i, 80);
            fasta += '\n';
        }
        ++emitted;
    }
    log_msg(LogLevel::info,
            strf("hivdb convert: %d records emitted, %d rows skipped", emitted, skipped));
    return fasta;
}

}  // namespace cmkn
