#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "cmkn/common.hpp"
#include "cmkn/kernel.hpp"
#include "cmkn/seqdata.hpp"

namespace cmkn {

/// The learnable subspace of the kernel layer: n motif-position anchors plus
/// the cached (pseudo-)inverse square root of their Gram matrix. Mutating the
/// parameters invalidates the cache; forward evaluation refuses to run on a
/// stale cache.
struct AnchorSet {
    Eigen::MatrixXd motifs;     // n x (|A| k), each row a flattened nPFM
    Eigen::MatrixXd positions;  // n x 2, unit rows on the upper half-circle
    double eps_rel = 1e-6;      // eigenvalue floor relative to the largest eigenvalue

    // Cache of the eigendecomposition of K_ZZ, refreshed by recompute_cache().
    Eigen::MatrixXd inv_sqrt;   // K_ZZ^{-1/2}
    Eigen::MatrixXd eigvecs;
    Eigen::VectorXd eigvals;
    double eps_abs = 0.0;
    std::uint64_t revision = 1;
    std::uint64_t cache_revision = 0;

    int count() const { return static_cast<int>(motifs.rows()); }
    int motif_dim() const { return static_cast<int>(motifs.cols()); }

    void mark_dirty() { ++revision; }
    bool cache_valid() const { return cache_revision == revision; }

    CirclePoint position(int i) const { return {positions(i, 0), positions(i, 1)}; }

    MotifPositionPair pair(int i) const {
        return {motifs.row(i).transpose(), position(i)};
    }

    void recompute_cache(const KernelParams& params);
};

/// K_ZZ[i][j] = K0(z_i, z_j) over the anchor set.
inline Eigen::MatrixXd compute_kzz(const AnchorSet& anchors, const KernelParams& params) {
    const int n = anchors.count();
    const Eigen::MatrixXd mdots = anchors.motifs * anchors.motifs.transpose();
    const Eigen::MatrixXd pdots = anchors.positions * anchors.positions.transpose();
    Eigen::MatrixXd kzz(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) kzz(i, j) = k0_fused(mdots(i, j), pdots(i, j), params);
    return kzz;
}

/// Pseudo-inverse square root of a symmetric PSD matrix via its
/// eigendecomposition: eigenvalues above `epsilon` map to lambda^{-1/2},
/// the rest to 0.
inline Eigen::MatrixXd inv_sqrt_psd(const Eigen::MatrixXd& m, double epsilon) {
    if (m.rows() != m.cols()) throw config_error("inv_sqrt_psd: matrix is not square");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10)
        throw numeric_error(strf("inv_sqrt_psd: input asymmetric by %g", asym));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw numeric_error("inv_sqrt_psd: eigendecomposition failed");
    Eigen::VectorXd f = es.eigenvalues();
    for (int i = 0; i < f.size(); ++i)
        f(i) = f(i) > epsilon ? 1.0 / std::sqrt(f(i)) : 0.0;
    Eigen::MatrixXd r =
        es.eigenvectors() * f.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (r + r.transpose());
}

inline void AnchorSet::recompute_cache(const KernelParams& params) {
    const Eigen::MatrixXd kzz = compute_kzz(*this, params);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kzz);
    if (es.info() != Eigen::Success)
        throw numeric_error("anchor Gram eigendecomposition failed");
    eigvecs = es.eigenvectors();
    eigvals = es.eigenvalues();
    eps_abs = eps_rel * std::max(eigvals.maxCoeff(), 0.0);
    Eigen::VectorXd f = eigvals;
    for (int i = 0; i < f.size(); ++i)
        f(i) = f(i) > eps_abs ? 1.0 / std::sqrt(f(i)) : 0.0;
    Eigen::MatrixXd r = eigvecs * f.asDiagonal() * eigvecs.transpose();
    inv_sqrt = 0.5 * (r + r.transpose());
    cache_revision = revision;
}

// ---------------------------------------------------------------------------
// Anchor initialization
// ---------------------------------------------------------------------------

/// Draws m motif-position pairs uniformly over all (sequence, valid position)
/// combinations of the dataset.
inline std::vector<MotifPositionPair> sample_pairs(const LabeledDataset& ds, int m, int k,
                                                   SplitRng& rng) {
    if (m < 1) throw config_error("sample count must be >= 1");
    std::vector<std::uint64_t> cum;  // cumulative window counts
    std::uint64_t total = 0;
    for (const auto& s : ds.sequences) {
        const int P = s.length() - k + 1;
        if (P > 0) total += static_cast<std::uint64_t>(P);
        cum.push_back(total);
    }
    if (total == 0)
        throw config_error(strf("no sequence has a valid window for k=%d", k));

    std::vector<MotifPositionPair> pairs;
    pairs.reserve(m);
    for (int i = 0; i < m; ++i) {
        const std::uint64_t r = rng.next_below(total);
        const auto it = std::upper_bound(cum.begin(), cum.end(), r);
        const int si = static_cast<int>(it - cum.begin());
        const auto& s = ds.sequences[si];
        const std::uint64_t base = si == 0 ? 0 : cum[si - 1];
        const int p = static_cast<int>(r - base) + 1;  // 1-based window start
        pairs.push_back({extract_window(s, p, k), map_position(p, s.length())});
    }
    return pairs;
}

/// Lloyd's algorithm with k-means++ (D^2) seeding. Ties in assignment go to
/// the lowest center index; an emptied cluster is re-seeded to the point
/// farthest from its assigned center.
inline Eigen::MatrixXd kmeans_pp(const Eigen::MatrixXd& points, int n, SplitRng& rng,
                                 int max_iter = 100, double tol = 1e-6,
                                 std::vector<double>* inertia_history = nullptr) {
    const int m = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    if (n < 1 || n > m) throw config_error("cluster count must satisfy 1 <= n <= m");

    Eigen::MatrixXd centers(n, d);
    Eigen::VectorXd dist2 = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::max());
    centers.row(0) = points.row(rng.next_below(m));
    for (int c = 1; c < n; ++c) {
        for (int i = 0; i < m; ++i)
            dist2(i) =
                std::min(dist2(i), (points.row(i) - centers.row(c - 1)).squaredNorm());
        const double total = dist2.sum();
        int pick = 0;
        if (total > 0.0) {
            const double r = rng.next_double() * total;
            double acc = 0.0;
            pick = m - 1;
            for (int i = 0; i < m; ++i) {
                acc += dist2(i);
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.next_below(m));
        }
        centers.row(c) = points.row(pick);
    }

    std::vector<int> assign(m, 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        double inertia = 0.0;
        for (int i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::max();
            int bi = 0;
            for (int c = 0; c < n; ++c) {
                const double d2 = (points.row(i) - centers.row(c)).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    bi = c;
                }
            }
            assign[i] = bi;
            inertia += best;
        }
        if (inertia_history) inertia_history->push_back(inertia);
        Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n, d);
        Eigen::VectorXd sizes = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < m; ++i) {
            next.row(assign[i]) += points.row(i);
            sizes(assign[i]) += 1.0;
        }
        for (int c = 0; c < n; ++c) {
            if (sizes(c) > 0.0) {
                next.row(c) /= sizes(c);
            } else {
                int far = 0;
                double far_d2 = -1.0;
                for (int i = 0; i < m; ++i) {
                    const double d2 = (points.row(i) - centers.row(assign[i])).squaredNorm();
                    if (d2 > far_d2) {
                        far_d2 = d2;
                        far = i;
                    }
                }
                next.row(c) = points.row(far);
                assign[far] = c;  // keep later empty clusters from reusing it
            }
        }
        const double moved = (next - centers).rowwise().norm().maxCoeff();
        centers = next;
        if (moved < tol) break;
    }
    return centers;
}

/// Enforces the anchor constraints on a concatenated [motif ; position]
/// vector: motif entries clamped nonnegative with unit-norm columns (a zero
/// column becomes uniform), position rescaled onto the upper half-circle.
inline MotifPositionPair project_to_anchor(const Eigen::VectorXd& v, int k) {
    if (v.size() < 3 || (v.size() - 2) % k != 0)
        throw config_error("project_to_anchor: bad vector length");
    const int A = static_cast<int>((v.size() - 2) / k);

    MotifPositionPair out;
    out.motif = v.head(v.size() - 2).cwiseMax(0.0);
    for (int j = 0; j < k; ++j) {
        auto col = out.motif.segment(j * A, A);
        const double norm = col.norm();
        if (norm > 0.0)
            col /= norm;
        else
            col.setConstant(1.0 / std::sqrt(static_cast<double>(A)));
    }

    double px = v(v.size() - 2);
    double py = v(v.size() - 1);
    const double pn = std::sqrt(px * px + py * py);
    if (pn > 0.0) {
        px /= pn;
        py /= pn;
    } else {
        px = 0.0;
        py = 1.0;
    }
    out.position = {px, std::abs(py)};
    return out;
}

/// Projects every anchor row in place and invalidates the cache.
inline void apply_anchor_constraints(AnchorSet& anchors, int k) {
    const int n = anchors.count();
    Eigen::VectorXd v(anchors.motif_dim() + 2);
    for (int i = 0; i < n; ++i) {
        v.head(anchors.motif_dim()) = anchors.motifs.row(i).transpose();
        v(anchors.motif_dim()) = anchors.positions(i, 0);
        v(anchors.motif_dim() + 1) = anchors.positions(i, 1);
        const MotifPositionPair p = project_to_anchor(v, k);
        anchors.motifs.row(i) = p.motif.transpose();
        anchors.positions(i, 0) = p.position.x;
        anchors.positions(i, 1) = p.position.y;
    }
    anchors.mark_dirty();
}

/// Anchor initialization: sample m >> n training pairs, k-means++ on the
/// concatenated [flattened motif ; circle coordinates], then constraint
/// projection per center and cache computation.
inline AnchorSet init_anchors(const LabeledDataset& ds, int n, int m, int k,
                              const KernelParams& params, SplitRng& rng,
                              int min_oversample = 10) {
    if (n < 1) throw config_error("anchor count must be >= 1");
    if (m < min_oversample * n)
        throw config_error(strf("anchor init needs m >= %d * n samples (m=%d, n=%d)",
                                min_oversample, m, n));
    const auto pairs = sample_pairs(ds, m, k, rng);
    const int D = static_cast<int>(pairs.front().motif.size());
    Eigen::MatrixXd points(m, D + 2);
    for (int i = 0; i < m; ++i) {
        points.row(i).head(D) = pairs[i].motif.transpose();
        points(i, D) = pairs[i].position.x;
        points(i, D + 1) = pairs[i].position.y;
    }
    const Eigen::MatrixXd centers = kmeans_pp(points, n, rng);

    AnchorSet anchors;
    anchors.motifs.resize(n, D);
    anchors.positions.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        const MotifPositionPair p = project_to_anchor(centers.row(i).transpose(), k);
        anchors.motifs.row(i) = p.motif.transpose();
        anchors.positions(i, 0) = p.position.x;
        anchors.positions(i, 1) = p.position.y;
    }
    anchors.recompute_cache(params);
    return anchors;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// K_Z over all valid windows of a sequence: entry (i, p) = K0(z_i, (w_p, p~)).
inline Eigen::MatrixXd kz_matrix(const EncodedSequence& x, const AnchorSet& anchors,
                                 const KernelParams& params) {
    const int P = window_count(x.length(), params.k);
    if (P < 1) throw config_error("layer input shorter than k");
    const Eigen::MatrixXd wins = window_matrix(x, params.k);  // P x D
    Eigen::MatrixXd pos(P, 2);
    for (int p = 0; p < P; ++p) {
        const CirclePoint pt = map_position(p + 1, x.length());
        pos(p, 0) = pt.x;
        pos(p, 1) = pt.y;
    }
    const double kd = static_cast<double>(params.k);
    Eigen::MatrixXd e = params.alpha * (anchors.motifs * wins.transpose());
    e.noalias() += params.gamma() * (anchors.positions * pos.transpose());
    e.array() -= params.alpha * kd + params.gamma();
    return e.array().exp();
}

/// Kernel-layer forward map: psi over every valid window, an n x (L-k+1)
/// matrix whose column p is K_ZZ^{-1/2} K_Z((w_p, p~)).
inline Eigen::MatrixXd layer_forward(const EncodedSequence& x, const AnchorSet& anchors,
                                     const KernelParams& params) {
    if (!anchors.cache_valid())
        throw config_error("anchor cache is stale; call recompute_cache() after mutation");
    return anchors.inv_sqrt * kz_matrix(x, anchors, params);
}

/// psi of a single motif-position pair.
inline Eigen::VectorXd psi_pair(const MotifPositionPair& y, const AnchorSet& anchors,
                                const KernelParams& params) {
    if (!anchors.cache_valid())
        throw config_error("anchor cache is stale; call recompute_cache() after mutation");
    const int n = anchors.count();
    Eigen::VectorXd kz(n);
    for (int i = 0; i < n; ++i) kz(i) = k0(anchors.pair(i), y, params);
    return anchors.inv_sqrt * kz;
}

struct LayerGrads {
    Eigen::MatrixXd motifs;     // n x D
    Eigen::MatrixXd positions;  // n x 2

    LayerGrads() = default;
    LayerGrads(int n, int d)
        : motifs(Eigen::MatrixXd::Zero(n, d)), positions(Eigen::MatrixXd::Zero(n, 2)) {}
};

/// Accumulates the K_Z-path gradient of one sequence and the matrix
/// S = G K_Z^T needed for the shared K_ZZ-path term. Returns so the caller
/// can batch the inverse-square-root differentiation over many sequences.
inline void layer_backward_kz(const EncodedSequence& x, const AnchorSet& anchors,
                              const KernelParams& params, const Eigen::MatrixXd& upstream,
                              LayerGrads& grads, Eigen::MatrixXd& s_accum) {
    const Eigen::MatrixXd kz = kz_matrix(x, anchors, params);
    if (upstream.rows() != kz.rows() || upstream.cols() != kz.cols())
        throw config_error("layer_backward: upstream gradient has the wrong shape");

    const Eigen::MatrixXd h = (anchors.inv_sqrt * upstream).cwiseProduct(kz);
    const int P = static_cast<int>(kz.cols());
    const Eigen::MatrixXd wins = window_matrix(x, params.k);
    Eigen::MatrixXd pos(P, 2);
    for (int p = 0; p < P; ++p) {
        const CirclePoint pt = map_position(p + 1, x.length());
        pos(p, 0) = pt.x;
        pos(p, 1) = pt.y;
    }
    grads.motifs.noalias() += params.alpha * (h * wins);
    grads.positions.noalias() += params.gamma() * (h * pos);
    s_accum.noalias() += upstream * kz.transpose();
}

/// Adds the K_ZZ-path gradient for an accumulated S = sum_x G_x K_Z(x)^T.
/// The derivative of K_ZZ^{-1/2} uses the Daleckii-Krein divided differences
/// of f(l) = l^{-1/2} (floored at the cached epsilon) on the eigenbasis;
/// repeated eigenvalues fall back to f'(l).
inline void layer_backward_kzz(const AnchorSet& anchors, const KernelParams& params,
                               const Eigen::MatrixXd& s, LayerGrads& grads) {
    const int n = anchors.count();
    const Eigen::VectorXd& lam = anchors.eigvals;
    const Eigen::MatrixXd& u = anchors.eigvecs;
    const double eps = anchors.eps_abs;

    auto f = [&](double l) { return l > eps ? 1.0 / std::sqrt(l) : 0.0; };
    auto fprime = [&](double l) { return l > eps ? -0.5 * std::pow(l, -1.5) : 0.0; };

    Eigen::MatrixXd fdiff(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double li = lam(i), lj = lam(j);
            if (std::abs(li - lj) > 1e-12 * std::max(1.0, std::abs(li) + std::abs(lj)))
                fdiff(i, j) = (f(li) - f(lj)) / (li - lj);
            else
                fdiff(i, j) = fprime(0.5 * (li + lj));
        }
    }

    const Eigen::MatrixXd q =
        u * fdiff.cwiseProduct(u.transpose() * s * u) * u.transpose();
    const Eigen::MatrixXd kzz = compute_kzz(anchors, params);
    const Eigen::MatrixXd qm = (q + q.transpose()).cwiseProduct(kzz);
    grads.motifs.noalias() += params.alpha * (qm * anchors.motifs);
    grads.positions.noalias() += params.gamma() * (qm * anchors.positions);
}

/// Exact analytic gradient of upstream . layer_forward(x) with respect to the
/// raw anchor parameters, differentiating through K_ZZ^{-1/2} unless detached.
inline LayerGrads layer_backward(const EncodedSequence& x, const AnchorSet& anchors,
                                 const KernelParams& params, const Eigen::MatrixXd& upstream,
                                 bool detach_inv_sqrt = false) {
    if (!anchors.cache_valid())
        throw config_error("anchor cache is stale; call recompute_cache() after mutation");
    LayerGrads grads(anchors.count(), anchors.motif_dim());
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(anchors.count(), anchors.count());
    layer_backward_kz(x, anchors, params, upstream, grads, s);
    if (!detach_inv_sqrt) layer_backward_kzz(anchors, params, s, grads);
    return grads;
}

}  // namespace cmkn
