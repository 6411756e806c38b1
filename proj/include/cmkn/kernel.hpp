#pragma once

#include <Eigen/Core>
#include <cmath>
#include <ostream>
#include <thread>
#include <utility>
#include <vector>

#include "cmkn/common.hpp"
#include "cmkn/seqdata.hpp"

namespace cmkn {

/// Kernel hyperparameters. Validated once at construction; the kernel
/// evaluations themselves never throw.
struct KernelParams {
    int k = 1;
    double alpha = 1.0;
    double beta = 1.0;
    double sigma = 1.0;

    KernelParams() = default;
    KernelParams(int k_, double alpha_, double beta_, double sigma_)
        : k(k_), alpha(alpha_), beta(beta_), sigma(sigma_) {
        if (k < 1) throw config_error("k must be an integer >= 1");
        if (alpha <= 0.0) throw config_error("alpha must be > 0");
        if (beta <= 0.0) throw config_error("beta must be > 0");
        if (sigma <= 0.0) throw config_error("sigma must be > 0");
    }

    /// beta / (2 sigma^2), the position-exponent scale.
    double gamma() const { return beta / (2.0 * sigma * sigma); }
};

/// Position comparison kernel exp(gamma (p~.q~ - 1)); 1 iff the points match.
inline double k_position(const CirclePoint& p, const CirclePoint& q,
                         const KernelParams& params) {
    return std::exp(params.gamma() * (p.dot(q) - 1.0));
}

/// Motif comparison kernel exp(alpha (w.v - k)); 1 iff the motifs match.
inline double k_npfm(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                     const KernelParams& params) {
    return std::exp(params.alpha * (w.dot(v) - static_cast<double>(params.k)));
}

/// K0 on precomputed inner products, evaluated as a single fused exponential
/// so the two factors cannot underflow separately.
inline double k0_fused(double motif_dot, double position_dot, const KernelParams& params) {
    return std::exp(params.alpha * (motif_dot - static_cast<double>(params.k)) +
                    params.gamma() * (position_dot - 1.0));
}

struct MotifPositionPair {
    Eigen::VectorXd motif;  // flattened nPFM, length |A| k
    CirclePoint position;
};

/// Product kernel over motif-position pairs.
inline double k0(const MotifPositionPair& z, const MotifPositionPair& y,
                 const KernelParams& params) {
    return k0_fused(z.motif.dot(y.motif), z.position.dot(y.position), params);
}

/// The constant C = sqrt(pi^2 sigma^2 / (2 alpha beta)) scaling the sequence kernel.
inline double pam_constant(const KernelParams& params) {
    const double pi = 3.14159265358979323846;
    return std::sqrt(pi * pi * params.sigma * params.sigma /
                     (2.0 * params.alpha * params.beta));
}

/// The suggested position scale for length-L sequences.
inline double default_beta(int L) {
    if (L < 1) throw config_error("sequence length must be >= 1");
    return static_cast<double>(L) * static_cast<double>(L) / 10.0;
}

/// Position-aware motif kernel between two sequences: C times the sum of K0
/// over all pairs of valid windows.
inline double k_pam(const EncodedSequence& x, const EncodedSequence& y,
                    const KernelParams& params) {
    if (x.matrix.rows() != y.matrix.rows())
        throw config_error("sequences use different alphabets");
    const int k = params.k;
    if (x.length() < k || y.length() < k)
        throw config_error(strf("k_pam: sequence shorter than k=%d", k));

    const Eigen::MatrixXd wx = window_matrix(x, k);  // Px x D
    const Eigen::MatrixXd wy = window_matrix(y, k);  // Py x D
    const int Px = static_cast<int>(wx.rows());
    const int Py = static_cast<int>(wy.rows());
    const Eigen::MatrixXd dots = wx * wy.transpose();

    const double pi = 3.14159265358979323846;
    const double alpha = params.alpha;
    const double gamma = params.gamma();
    const double kd = static_cast<double>(k);
    double sum = 0.0;
    for (int p = 0; p < Px; ++p) {
        const double ap = pi * static_cast<double>(p + 1) / static_cast<double>(x.length());
        for (int q = 0; q < Py; ++q) {
            const double aq =
                pi * static_cast<double>(q + 1) / static_cast<double>(y.length());
            sum += std::exp(alpha * (dots(p, q) - kd) + gamma * (std::cos(ap - aq) - 1.0));
        }
    }
    return pam_constant(params) * sum;
}

/// Gram matrix over a dataset. The upper triangle is computed once and
/// mirrored; rows are distributed over `threads` workers with disjoint writes.
inline Eigen::MatrixXd gram(const LabeledDataset& ds, const KernelParams& params,
                            int threads = 1) {
    const int n = static_cast<int>(ds.sequences.size());
    Eigen::MatrixXd g(n, n);
    auto fill_rows = [&](int first, int step) {
        for (int i = first; i < n; i += step)
            for (int j = i; j < n; ++j)
                g(i, j) = k_pam(ds.sequences[i], ds.sequences[j], params);
    };
    if (threads <= 1) {
        fill_rows(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(fill_rows, t, threads);
        for (auto& th : pool) th.join();
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) g(i, j) = g(j, i);
    return g;
}

/// Motif function of sequence x evaluated at an unconstrained point (chi, t):
/// sum over valid windows of exp(-alpha |chi - w_p|^2 - gamma |t - p~|^2).
inline double motif_function_eval(const EncodedSequence& x, const Eigen::VectorXd& chi,
                                  const Eigen::Vector2d& t, const KernelParams& params) {
    const int P = window_count(x.length(), params.k);
    if (P < 1) throw config_error("sequence shorter than k");
    const double gamma = params.gamma();
    double sum = 0.0;
    for (int p = 1; p <= P; ++p) {
        const Eigen::VectorXd w = extract_window(x, p, params.k);
        const CirclePoint pt = map_position(p, x.length());
        const double dpos = (t.x() - pt.x) * (t.x() - pt.x) + (t.y() - pt.y) * (t.y() - pt.y);
        sum += std::exp(-params.alpha * (chi - w).squaredNorm() - gamma * dpos);
    }
    return sum;
}

/// Returns (-1/2 |a-b|^2, a.b - k). Equal for valid flattened nPFMs; the
/// identity that turns the Gaussian motif distance into a linear product.
inline std::pair<double, double> linearization_identity_check(const Eigen::VectorXd& a,
                                                              const Eigen::VectorXd& b,
                                                              int k) {
    return {-0.5 * (a - b).squaredNorm(), a.dot(b) - static_cast<double>(k)};
}

// ---------------------------------------------------------------------------
// Gram export
// ---------------------------------------------------------------------------

/// Plain CSV, row-major, with a "n=<N>" header line.
inline void write_gram_csv(const Eigen::MatrixXd& g, std::ostream& out) {
    out << "n=" << g.rows() << "\n";
    for (int i = 0; i < g.rows(); ++i) {
        for (int j = 0; j < g.cols(); ++j) {
            if (j) out << ',';
            out << fmt_double(g(i, j));
        }
        out << '\n';
    }
}

/// Precomputed-kernel text format for SVM tools: one line per sample,
/// "<label> 0:<serial> 1:<K(i,1)> ... n:<K(i,n)>" with 1-based serials.
inline void write_gram_svm(const Eigen::MatrixXd& g, const std::vector<int>& labels,
                           std::ostream& out) {
    if (static_cast<int>(labels.size()) != g.rows())
        throw config_error("label count does not match the Gram size");
    for (int i = 0; i < g.rows(); ++i) {
        out << labels[i] << " 0:" << (i + 1);
        for (int j = 0; j < g.cols(); ++j)
            out << ' ' << (j + 1) << ':' << fmt_double(g(i, j));
        out << '\n';
    }
}

}  // namespace cmkn
