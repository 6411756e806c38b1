#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "cmkn/nystroem.hpp"

using namespace cmkn;

namespace {

std::string random_dna(SplitRng& rng, int L) {
    std::string s;
    for (int i = 0; i < L; ++i) s.push_back("ACGT"[rng.next_below(4)]);
    return s;
}

LabeledDataset random_dataset(SplitRng& rng, int count, int L) {
    LabeledDataset ds;
    ds.alphabet = Alphabet::dna();
    ds.class_names = {"a", "b"};
    for (int i = 0; i < count; ++i)
        ds.sequences.push_back(
            encode_sequence(random_dna(rng, L), ds.alphabet, strf("s%d", i), i % 2));
    return ds;
}

// Objective for finite differences: f(anchors) = <G, inv_sqrt(K_ZZ) K_Z(x)>.
double layer_objective(const EncodedSequence& x, AnchorSet anchors,
                       const KernelParams& params, const Eigen::MatrixXd& g, bool detach,
                       const Eigen::MatrixXd& frozen_inv_sqrt) {
    if (detach) {
        anchors.inv_sqrt = frozen_inv_sqrt;
        anchors.cache_revision = anchors.revision;
    } else {
        anchors.recompute_cache(params);
    }
    return (g.cwiseProduct(anchors.inv_sqrt * kz_matrix(x, anchors, params))).sum();
}

}  // namespace

TEST_CASE("sample_pairs basics") {
    SplitRng rng(9);
    LabeledDataset one = random_dataset(rng, 1, 12);
    SplitRng prng(1);
    const auto pairs = sample_pairs(one, 1, 3, prng);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].motif.size() == 12);
    CHECK(std::abs(pairs[0].motif.dot(pairs[0].motif) - 3.0) < 1e-8);
    const double r2 = pairs[0].position.x * pairs[0].position.x +
                      pairs[0].position.y * pairs[0].position.y;
    CHECK(std::abs(r2 - 1.0) < 1e-12);

    SplitRng ra(4), rb(4);
    const auto p1 = sample_pairs(one, 20, 3, ra);
    const auto p2 = sample_pairs(one, 20, 3, rb);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].motif == p2[i].motif);

    LabeledDataset tiny = random_dataset(rng, 2, 2);
    SplitRng pr2(1);
    CHECK_THROWS_AS(sample_pairs(tiny, 5, 3, pr2), config_error);
}

TEST_CASE("sample_pairs position distribution is uniform (chi-squared)") {
    SplitRng rng(15);
    LabeledDataset ds = random_dataset(rng, 50, 20);
    SplitRng prng(8);
    const int draws = 10000;
    const auto pairs = sample_pairs(ds, draws, 1, prng);
    std::vector<int> counts(20, 0);
    for (const auto& p : pairs) {
        // recover the 1-based position index from the circle angle
        const double angle = std::atan2(p.position.y, p.position.x);
        const int pos = static_cast<int>(std::round(angle * 20 / 3.14159265358979323846));
        ++counts[pos - 1];
    }
    const double expected = draws / 20.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // critical value at significance 0.01, df = 19
    CHECK(chi2 < 36.1909);
}

TEST_CASE("kmeans recovers blobs, keeps points when n = m, decreases inertia") {
    SplitRng rng(33);

    // n = m: centers are the points up to permutation
    Eigen::MatrixXd pts(4, 2);
    pts << 0, 0, 1, 0, 0, 1, 5, 5;
    SplitRng r1(2);
    const Eigen::MatrixXd centers = kmeans_pp(pts, 4, r1);
    for (int i = 0; i < 4; ++i) {
        bool found = false;
        for (int c = 0; c < 4; ++c)
            if ((centers.row(c) - pts.row(i)).norm() < 1e-12) found = true;
        CHECK(found);
    }

    // two separated blobs
    const int per = 200;
    Eigen::MatrixXd blobs(2 * per, 2);
    for (int i = 0; i < per; ++i) {
        blobs(i, 0) = 0.0 + 0.1 * rng.next_normal();
        blobs(i, 1) = 0.0 + 0.1 * rng.next_normal();
        blobs(per + i, 0) = 5.0 + 0.1 * rng.next_normal();
        blobs(per + i, 1) = 5.0 + 0.1 * rng.next_normal();
    }
    SplitRng r2(3);
    std::vector<double> inertia;
    const Eigen::MatrixXd two = kmeans_pp(blobs, 2, r2, 100, 1e-8, &inertia);
    const double d00 = std::min((two.row(0) - Eigen::RowVector2d(0, 0)).norm(),
                                (two.row(1) - Eigen::RowVector2d(0, 0)).norm());
    const double d55 = std::min((two.row(0) - Eigen::RowVector2d(5, 5)).norm(),
                                (two.row(1) - Eigen::RowVector2d(5, 5)).norm());
    CHECK(d00 < 0.3);
    CHECK(d55 < 0.3);
    for (std::size_t t = 1; t < inertia.size(); ++t)
        CHECK(inertia[t] <= inertia[t - 1] + 1e-9);

    CHECK_THROWS_AS(kmeans_pp(pts, 5, rng), config_error);
}

TEST_CASE("project_to_anchor clamps, normalizes, reflects, idempotent") {
    // motif column (-1, 2, 0, 0) -> (0, 1, 0, 0); position (3, -4) -> (0.6, 0.8)
    Eigen::VectorXd v(6);
    v << -1, 2, 0, 0, 3, -4;
    const MotifPositionPair p = project_to_anchor(v, 1);
    CHECK(p.motif(0) == 0.0);
    CHECK(p.motif(1) == 1.0);
    CHECK(p.position.x == Catch::Approx(0.6));
    CHECK(p.position.y == Catch::Approx(0.8));

    // zero motif column becomes uniform, zero position becomes (0, 1)
    Eigen::VectorXd z = Eigen::VectorXd::Zero(6);
    const MotifPositionPair q = project_to_anchor(z, 1);
    for (int i = 0; i < 4; ++i) CHECK(q.motif(i) == Catch::Approx(0.5));
    CHECK(q.position.x == 0.0);
    CHECK(q.position.y == 1.0);

    // idempotence on an already valid anchor
    Eigen::VectorXd w(6);
    w << p.motif(0), p.motif(1), p.motif(2), p.motif(3), p.position.x, p.position.y;
    const MotifPositionPair r = project_to_anchor(w, 1);
    CHECK((r.motif - p.motif).norm() < 1e-12);
    CHECK(std::abs(r.position.x - p.position.x) < 1e-12);
    CHECK(std::abs(r.position.y - p.position.y) < 1e-12);
}

TEST_CASE("inv_sqrt_psd basics") {
    CHECK(inv_sqrt_psd(Eigen::MatrixXd::Identity(3, 3), 0.0) ==
          Eigen::MatrixXd::Identity(3, 3));

    Eigen::MatrixXd d = Eigen::Vector2d(4.0, 9.0).asDiagonal();
    const Eigen::MatrixXd r = inv_sqrt_psd(d, 0.0);
    CHECK(r(0, 0) == Catch::Approx(0.5));
    CHECK(r(1, 1) == Catch::Approx(1.0 / 3.0));
    CHECK(r(0, 1) == Catch::Approx(0.0).margin(1e-15));

    SplitRng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd a(6, 6);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) a(i, j) = rng.next_normal();
        const Eigen::MatrixXd m = a * a.transpose() + Eigen::MatrixXd::Identity(6, 6) * 0.5;
        const Eigen::MatrixXd rr = inv_sqrt_psd(m, 0.0);
        CHECK((rr * m * rr - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-8);
        // epsilon invariance while the floor stays below the spectrum
        const Eigen::MatrixXd r2 = inv_sqrt_psd(m, 0.4);
        CHECK((rr - r2).cwiseAbs().maxCoeff() < 1e-12);
    }

    Eigen::MatrixXd bad(2, 2);
    bad << 1, 0.5, 0.0, 1;
    CHECK_THROWS_AS(inv_sqrt_psd(bad, 0.0), numeric_error);
}

TEST_CASE("init_anchors produces valid anchors deterministically") {
    SplitRng rng(77);
    LabeledDataset ds = random_dataset(rng, 30, 25);
    const KernelParams params(3, 1.0, 40.0, 2.0);

    SplitRng a(5);
    const AnchorSet anchors = init_anchors(ds, 6, 120, 3, params, a);
    CHECK(anchors.count() == 6);
    for (int i = 0; i < anchors.count(); ++i) {
        const Eigen::MatrixXd m = unflatten_npfm(anchors.motifs.row(i).transpose(), 4);
        CHECK_NOTHROW(validate_npfm(m, 1e-6));
        CHECK(std::abs(anchors.positions.row(i).squaredNorm() - 1.0) < 1e-12);
        CHECK(anchors.positions(i, 1) >= 0.0);
    }

    // cached inverse square root reconstructs a projector over K_ZZ
    const Eigen::MatrixXd kzz = compute_kzz(anchors, params);
    const Eigen::MatrixXd proj = anchors.inv_sqrt * kzz * anchors.inv_sqrt;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(proj);
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double l = es.eigenvalues()(i);
        CHECK((std::abs(l) < 1e-7 || std::abs(l - 1.0) < 1e-7));
    }

    SplitRng b(5);
    const AnchorSet again = init_anchors(ds, 6, 120, 3, params, b);
    CHECK(again.motifs == anchors.motifs);
    CHECK(again.positions == anchors.positions);

    SplitRng c(5);
    const AnchorSet single = init_anchors(ds, 1, 100, 3, params, c);
    CHECK(single.count() == 1);
    CHECK(single.inv_sqrt.rows() == 1);

    SplitRng d(5);
    CHECK_THROWS_AS(init_anchors(ds, 6, 30, 3, params, d), config_error);
}

TEST_CASE("compute_kzz diagonal, symmetry, PSD, duplicate anchors") {
    SplitRng rng(31);
    LabeledDataset ds = random_dataset(rng, 20, 15);
    const KernelParams params(2, 1.0, 20.0, 2.0);
    SplitRng a(9);
    const AnchorSet anchors = init_anchors(ds, 5, 60, 2, params, a);
    const Eigen::MatrixXd kzz = compute_kzz(anchors, params);
    CHECK(kzz == kzz.transpose());
    for (int i = 0; i < 5; ++i) CHECK(kzz(i, i) == Catch::Approx(1.0).margin(1e-12));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kzz);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);

    AnchorSet dup;
    dup.motifs = Eigen::MatrixXd(2, 8);
    dup.motifs.row(0) = anchors.motifs.row(0);
    dup.motifs.row(1) = anchors.motifs.row(0);
    dup.positions = Eigen::MatrixXd(2, 2);
    dup.positions.row(0) = anchors.positions.row(0);
    dup.positions.row(1) = anchors.positions.row(0);
    const Eigen::MatrixXd ones = compute_kzz(dup, params);
    CHECK((ones - Eigen::MatrixXd::Ones(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer_forward shapes, stale cache, single anchor") {
    SplitRng rng(41);
    LabeledDataset ds = random_dataset(rng, 10, 12);
    const KernelParams params(2, 1.0, 10.0, 1.5);
    SplitRng a(3);
    AnchorSet anchors = init_anchors(ds, 4, 40, 2, params, a);

    const Eigen::MatrixXd psi = layer_forward(ds.sequences[0], anchors, params);
    CHECK(psi.rows() == 4);
    CHECK(psi.cols() == 11);
    CHECK(psi.allFinite());

    anchors.motifs(0, 0) += 0.01;
    anchors.mark_dirty();
    CHECK_THROWS_AS(layer_forward(ds.sequences[0], anchors, params), config_error);
    anchors.recompute_cache(params);
    CHECK_NOTHROW(layer_forward(ds.sequences[0], anchors, params));

    // single anchor: psi = K0(z, .) because the 1x1 Gram is exactly 1
    SplitRng b(3);
    AnchorSet one = init_anchors(ds, 1, 40, 2, params, b);
    const Eigen::MatrixXd p1 = layer_forward(ds.sequences[1], one, params);
    const Eigen::MatrixXd kz = kz_matrix(ds.sequences[1], one, params);
    CHECK((p1 - kz).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Nystroem reproduces the kernel on anchors and contracts norms") {
    SplitRng rng(52);
    LabeledDataset ds = random_dataset(rng, 25, 18);
    const KernelParams params(2, 1.0, 30.0, 2.0);
    SplitRng a(7);
    AnchorSet anchors = init_anchors(ds, 8, 80, 2, params, a);

    const Eigen::VectorXd lam =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(compute_kzz(anchors, params))
            .eigenvalues();
    const double cond = lam.maxCoeff() / lam.minCoeff();
    REQUIRE(cond < 1e6);

    SplitRng prng(11);
    const auto ys = sample_pairs(ds, 30, 2, prng);
    for (int i = 0; i < anchors.count(); ++i) {
        const Eigen::VectorXd pz = psi_pair(anchors.pair(i), anchors, params);
        for (const auto& y : ys) {
            const Eigen::VectorXd py = psi_pair(y, anchors, params);
            CHECK(std::abs(pz.dot(py) - k0(anchors.pair(i), y, params)) < 1e-8);
        }
    }
    for (const auto& y : ys) {
        const Eigen::VectorXd py = psi_pair(y, anchors, params);
        CHECK(py.squaredNorm() <= 1.0 + 1e-8);
    }
}

TEST_CASE("layer_backward matches central finite differences") {
    SplitRng rng(64);
    const KernelParams cases[] = {KernelParams(1, 1.0, 8.0, 1.0),
                                  KernelParams(2, 0.7, 25.0, 2.0),
                                  KernelParams(3, 1.3, 12.0, 1.2)};
    for (const auto& params : cases) {
        LabeledDataset ds = random_dataset(rng, 12, 14);
        const int n = 3 + static_cast<int>(rng.next_below(6));  // n <= 8
        SplitRng a(rng.next_u64());
        AnchorSet anchors = init_anchors(ds, n, 20 * n, params.k, params, a);
        const EncodedSequence& x = ds.sequences[0];
        const int P = window_count(x.length(), params.k);
        Eigen::MatrixXd g(n, P);
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < P; ++p) g(i, p) = rng.next_normal();

        for (bool detach : {false, true}) {
            const Eigen::MatrixXd frozen = anchors.inv_sqrt;
            const LayerGrads grads = layer_backward(x, anchors, params, g, detach);
            const double h = 1e-5;
            auto check_grad = [&](Eigen::MatrixXd& param, const Eigen::MatrixXd& analytic) {
                for (int i = 0; i < param.rows(); ++i)
                    for (int j = 0; j < param.cols(); ++j) {
                        const double save = param(i, j);
                        param(i, j) = save + h;
                        const double fp = layer_objective(x, anchors, params, g, detach, frozen);
                        param(i, j) = save - h;
                        const double fm = layer_objective(x, anchors, params, g, detach, frozen);
                        param(i, j) = save;
                        const double fd = (fp - fm) / (2.0 * h);
                        const double rel =
                            std::abs(analytic(i, j) - fd) /
                            std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-6});
                        CHECK(rel < 1e-5);
                    }
            };
            check_grad(anchors.motifs, grads.motifs);
            check_grad(anchors.positions, grads.positions);
        }
    }
}

TEST_CASE("zero upstream gives zero gradient") {
    SplitRng rng(71);
    LabeledDataset ds = random_dataset(rng, 8, 10);
    const KernelParams params(2, 1.0, 10.0, 1.0);
    SplitRng a(2);
    AnchorSet anchors = init_anchors(ds, 3, 30, 2, params, a);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 9);
    const LayerGrads grads = layer_backward(ds.sequences[0], anchors, params, zero);
    CHECK(grads.motifs.cwiseAbs().maxCoeff() == 0.0);
    CHECK(grads.positions.cwiseAbs().maxCoeff() == 0.0);
}
