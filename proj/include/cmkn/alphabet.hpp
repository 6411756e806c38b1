#pragma once

#include <Eigen/Core>
#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "cmkn/common.hpp"

namespace cmkn {

/// Symbol set for sequence encodings. Ambiguity characters expand to a set of
/// member symbols and encode as uniform unit-norm columns.
struct Alphabet {
    std::string name;
    std::string symbols;                      // ordered, unique, uppercase
    std::map<char, std::string> ambiguity;    // char -> member symbols

    int size() const { return static_cast<int>(symbols.size()); }

    int index_of(char c) const {
        auto pos = symbols.find(static_cast<char>(std::toupper(c)));
        return pos == std::string::npos ? -1 : static_cast<int>(pos);
    }

    void validate() const {
        if (symbols.size() < 2)
            throw config_error("alphabet must have at least 2 symbols");
        for (std::size_t i = 0; i < symbols.size(); ++i)
            for (std::size_t j = i + 1; j < symbols.size(); ++j)
                if (symbols[i] == symbols[j])
                    throw config_error(strf("duplicate alphabet symbol '%c'", symbols[i]));
        for (const auto& [c, members] : ambiguity) {
            if (members.empty())
                throw config_error(strf("ambiguity '%c' maps to empty set", c));
            for (char m : members)
                if (index_of(m) < 0)
                    throw config_error(
                        strf("ambiguity '%c' target '%c' not in alphabet", c, m));
        }
    }

    static Alphabet dna() {
        Alphabet a;
        a.name = "dna";
        a.symbols = "ACGT";
        a.ambiguity = {{'R', "AG"},  {'Y', "CT"},  {'S', "CG"},  {'W', "AT"},
                       {'K', "GT"},  {'M', "AC"},  {'B', "CGT"}, {'D', "AGT"},
                       {'H', "ACT"}, {'V', "ACG"}, {'N', "ACGT"}};
        return a;
    }

    static Alphabet protein() {
        Alphabet a;
        a.name = "protein";
        a.symbols = "ACDEFGHIKLMNPQRSTVWY";
        a.ambiguity = {{'B', "DN"}, {'Z', "EQ"}, {'J', "IL"},
                       {'X', "ACDEFGHIKLMNPQRSTVWY"}};
        return a;
    }

    static Alphabet by_name(const std::string& name) {
        if (name == "dna") return dna();
        if (name == "protein") return protein();
        throw config_error("unknown alphabet '" + name + "' (expected dna or protein)");
    }
};

/// A sequence as an |A| x L matrix with unit-norm columns. Unambiguous
/// symbols give one-hot columns; an ambiguity over s symbols gives 1/sqrt(s)
/// at each member row. Positions are 1-based in every public interface.
struct EncodedSequence {
    Eigen::MatrixXd matrix;  // |A| x L
    std::string id;
    std::string raw;         // uppercased input characters
    int label = -1;          // class index, -1 when unlabeled

    int length() const { return static_cast<int>(matrix.cols()); }
};

inline EncodedSequence encode_sequence(const std::string& raw, const Alphabet& alphabet,
                                       std::string id = "", int label = -1) {
    if (raw.empty()) throw data_error("cannot encode an empty sequence");
    const int A = alphabet.size();
    EncodedSequence seq;
    seq.matrix = Eigen::MatrixXd::Zero(A, static_cast<int>(raw.size()));
    seq.raw.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char up = static_cast<char>(std::toupper(raw[i]));
        seq.raw.push_back(up);
        const int idx = alphabet.index_of(up);
        if (idx >= 0) {
            seq.matrix(idx, static_cast<int>(i)) = 1.0;
            continue;
        }
        auto it = alphabet.ambiguity.find(up);
        if (it == alphabet.ambiguity.end())
            throw data_error(strf("unknown symbol '%c' at position %zu", up, i + 1));
        const double v = 1.0 / std::sqrt(static_cast<double>(it->second.size()));
        for (char m : it->second) seq.matrix(alphabet.index_of(m), static_cast<int>(i)) = v;
    }
    seq.id = std::move(id);
    seq.label = label;
    return seq;
}

}  // namespace cmkn
