#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "cmkn/kernel.hpp"

using namespace cmkn;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string random_dna(SplitRng& rng, int L) {
    std::string s;
    for (int i = 0; i < L; ++i) s.push_back("ACGT"[rng.next_below(4)]);
    return s;
}

// Independent brute-force double sum: windows rebuilt column by column, the
// two kernel factors evaluated separately, angles via explicit cos/sin.
double k_pam_bruteforce(const EncodedSequence& x, const EncodedSequence& y,
                        const KernelParams& params) {
    const int k = params.k;
    double sum = 0.0;
    for (int p = 1; p <= x.length() - k + 1; ++p) {
        for (int q = 1; q <= y.length() - k + 1; ++q) {
            double dot = 0.0;
            for (int j = 0; j < k; ++j)
                dot += x.matrix.col(p - 1 + j).dot(y.matrix.col(q - 1 + j));
            const double knp = std::exp(params.alpha * (dot - k));
            const double ap = kPi * p / x.length();
            const double aq = kPi * q / y.length();
            const double pdot = std::cos(ap) * std::cos(aq) + std::sin(ap) * std::sin(aq);
            const double kpos =
                std::exp(params.beta / (2.0 * params.sigma * params.sigma) * (pdot - 1.0));
            sum += knp * kpos;
        }
    }
    return std::sqrt(kPi * kPi * params.sigma * params.sigma /
                     (2.0 * params.alpha * params.beta)) *
           sum;
}

}  // namespace

TEST_CASE("kernel params validate") {
    CHECK_THROWS_AS(KernelParams(0, 1, 1, 1), config_error);
    CHECK_THROWS_AS(KernelParams(1, 0, 1, 1), config_error);
    CHECK_THROWS_AS(KernelParams(1, 1, -1, 1), config_error);
    CHECK_THROWS_AS(KernelParams(1, 1, 1, 0), config_error);
    CHECK(KernelParams(2, 1, 8, 2).gamma() == Catch::Approx(1.0));
}

TEST_CASE("k_position identity, antipodal limit, monotone decay") {
    const KernelParams params(1, 1.0, 50.0, 2.0);
    const CirclePoint a = map_position(17, 100);
    CHECK(k_position(a, a, params) == 1.0);

    // p = 1 vs q = L for large L: exponent tends to -beta / sigma^2
    const int L = 100000;
    const double v = k_position(map_position(1, L), map_position(L, L), params);
    const double expected = std::exp(-params.beta / (params.sigma * params.sigma));
    CHECK(v == Catch::Approx(expected).epsilon(1e-6));

    double prev = 2.0;
    for (int d = 0; d < 100; ++d) {
        const double val = k_position(map_position(1, 100), map_position(1 + d, 100), params);
        CHECK(val < prev);
        CHECK(val > 0.0);
        CHECK(val <= 1.0);
        prev = val;
    }
}

TEST_CASE("k_npfm hand values") {
    const KernelParams params(2, 1.0, 1.0, 1.0);
    Eigen::VectorXd ac(8), ag(8), gt(8);
    ac.setZero();
    ag.setZero();
    gt.setZero();
    ac(0) = 1.0; ac(4 + 1) = 1.0;  // A then C
    ag(0) = 1.0; ag(4 + 2) = 1.0;  // A then G
    gt(2) = 1.0; gt(4 + 3) = 1.0;  // G then T

    CHECK(k_npfm(ac, ac, params) == 1.0);
    CHECK(k_npfm(ac, gt, params) == Catch::Approx(std::exp(-2.0)));
    CHECK(k_npfm(ac, ag, params) == Catch::Approx(std::exp(-1.0)));
}

TEST_CASE("k0 symmetry and factorization") {
    SplitRng rng(21);
    const Alphabet dna = Alphabet::dna();
    const KernelParams params(2, 0.7, 30.0, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
        const EncodedSequence s = encode_sequence(random_dna(rng, 10), dna);
        const int p = 1 + static_cast<int>(rng.next_below(9));
        const int q = 1 + static_cast<int>(rng.next_below(9));
        const MotifPositionPair z{extract_window(s, p, 2), map_position(p, 10)};
        const MotifPositionPair y{extract_window(s, q, 2), map_position(q, 10)};
        const double v = k0(z, y, params);
        CHECK(v == k0(y, z, params));
        CHECK(v > 0.0);
        CHECK(v <= 1.0 + 1e-15);
        const double product = k_npfm(z.motif, y.motif, params) *
                               k_position(z.position, y.position, params);
        CHECK(std::abs(v - product) < 1e-15);
        const double self = k0(z, z, params);
        CHECK(std::abs(self - 1.0) < 1e-12);
    }
}

TEST_CASE("pam_constant") {
    CHECK(pam_constant(KernelParams(1, 1.0, kPi * kPi / 2.0, 1.0)) == Catch::Approx(1.0));
    CHECK(pam_constant(KernelParams(1, 1.0, 1000.0, 4.0)) ==
          Catch::Approx(std::sqrt(kPi * kPi * 16.0 / 2000.0)));
    const double c1 = pam_constant(KernelParams(1, 2.0, 3.0, 1.0));
    const double c5 = pam_constant(KernelParams(1, 2.0, 3.0, 5.0));
    CHECK(c5 == Catch::Approx(5.0 * c1));
}

TEST_CASE("k_pam single window and symmetry") {
    const Alphabet dna = Alphabet::dna();
    const KernelParams params(3, 1.0, 2.0, 1.0);
    const EncodedSequence x = encode_sequence("ACG", dna);
    const EncodedSequence y = encode_sequence("ACT", dna);
    const MotifPositionPair zx{extract_window(x, 1, 3), map_position(1, 3)};
    const MotifPositionPair zy{extract_window(y, 1, 3), map_position(1, 3)};
    CHECK(k_pam(x, y, params) ==
          Catch::Approx(pam_constant(params) * k0(zx, zy, params)));

    SplitRng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const EncodedSequence a = encode_sequence(random_dna(rng, 9), dna);
        const EncodedSequence b = encode_sequence(random_dna(rng, 7), dna);
        const KernelParams p(2, 0.5 + rng.next_double(), 1.0 + 5.0 * rng.next_double(),
                             0.5 + rng.next_double());
        CHECK(k_pam(a, a, p) > 0.0);
        CHECK(k_pam(a, b, p) == Catch::Approx(k_pam(b, a, p)).epsilon(1e-14));
    }

    CHECK_THROWS_AS(k_pam(encode_sequence("AC", dna), y, params), config_error);
}

TEST_CASE("k_pam equals the brute-force oracle") {
    const Alphabet dna = Alphabet::dna();
    SplitRng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + static_cast<int>(rng.next_below(3));
        const int lx = k + static_cast<int>(rng.next_below(12 - k + 1));
        const int ly = k + static_cast<int>(rng.next_below(12 - k + 1));
        const EncodedSequence x = encode_sequence(random_dna(rng, lx), dna);
        const EncodedSequence y = encode_sequence(random_dna(rng, ly), dna);
        const KernelParams params(k, 0.3 + 2.0 * rng.next_double(),
                                  0.5 + 10.0 * rng.next_double(),
                                  0.5 + 2.0 * rng.next_double());
        const double fast = k_pam(x, y, params);
        const double oracle = k_pam_bruteforce(x, y, params);
        CHECK(std::abs(fast - oracle) <= 1e-12 * std::max(1.0, std::abs(oracle)));
    }
}

TEST_CASE("gram matrix basics and positive semidefiniteness") {
    const Alphabet dna = Alphabet::dna();
    SplitRng rng(77);
    const KernelParams params(2, 1.0, 5.0, 1.0);

    LabeledDataset one;
    one.alphabet = dna;
    one.class_names = {"x"};
    one.sequences.push_back(encode_sequence(random_dna(rng, 8), dna, "s", 0));
    const Eigen::MatrixXd g1 = gram(one, params);
    CHECK(g1.rows() == 1);
    CHECK(g1(0, 0) > 0.0);

    LabeledDataset ds;
    ds.alphabet = dna;
    ds.class_names = {"x"};
    for (int i = 0; i < 10; ++i)
        ds.sequences.push_back(encode_sequence(random_dna(rng, 8), dna, strf("s%d", i), 0));
    const Eigen::MatrixXd g = gram(ds, params);
    CHECK(g == g.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);

    for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j)
            CHECK(g(i, j) ==
                  Catch::Approx(k_pam(ds.sequences[i], ds.sequences[j], params)).epsilon(1e-14));

    // threaded computation matches single-threaded exactly
    CHECK(gram(ds, params, 3) == g);
}

TEST_CASE("motif function self term and decay") {
    const Alphabet dna = Alphabet::dna();
    const KernelParams params(2, 1.0, 4.0, 1.0);
    const EncodedSequence one = encode_sequence("AC", dna);  // single window
    const Eigen::VectorXd w = extract_window(one, 1, 2);
    const CirclePoint pt = map_position(1, 2);
    CHECK(motif_function_eval(one, w, Eigen::Vector2d(pt.x, pt.y), params) ==
          Catch::Approx(1.0));

    const EncodedSequence multi = encode_sequence("ACGTAC", dna);
    for (int p = 1; p <= 5; ++p) {
        const Eigen::VectorXd wp = extract_window(multi, p, 2);
        const CirclePoint pp = map_position(p, 6);
        CHECK(motif_function_eval(multi, wp, Eigen::Vector2d(pp.x, pp.y), params) >= 1.0);
    }

    Eigen::VectorXd far = Eigen::VectorXd::Constant(8, 50.0);
    CHECK(motif_function_eval(multi, far, Eigen::Vector2d(0, 1), params) < 1e-100);
}

TEST_CASE("motif function inner product reproduces k_pam (Monte Carlo smoke)") {
    // Full-precision version runs in the acceptance suite; this is one pair.
    // The raw integral over R^D x R^2 carries the per-dimension Gaussian
    // normalizations: it equals (pi/(2a))^((D-1)/2) sqrt(pi/(2g)) * k_pam.
    // For D = |A| k = 2 that factor is exactly the kernel constant C.
    Alphabet bin;
    bin.name = "custom";
    bin.symbols = "AC";
    SplitRng rng(5);
    const KernelParams params(1, 1.0, 1.0, 1.0);  // gamma = 0.5
    const EncodedSequence x = encode_sequence("ACA", bin);
    const EncodedSequence y = encode_sequence("CAA", bin);
    const double exact = pam_constant(params) * k_pam(x, y, params);

    // Importance sampling with a wide Gaussian proposal over (chi, t).
    const double s = 1.5;
    const double inv_norm = 1.0 / (2.0 * kPi * s * s);  // per 2-d block
    const int N = 400000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < N; ++i) {
        Eigen::VectorXd chi(2);
        chi << 0.5 + s * rng.next_normal(), 0.5 + s * rng.next_normal();
        Eigen::Vector2d t(s * rng.next_normal(), 0.5 + s * rng.next_normal());
        const double g = inv_norm * std::exp(-((chi(0) - 0.5) * (chi(0) - 0.5) +
                                               (chi(1) - 0.5) * (chi(1) - 0.5)) /
                                             (2 * s * s)) *
                         inv_norm *
                         std::exp(-(t(0) * t(0) + (t(1) - 0.5) * (t(1) - 0.5)) / (2 * s * s));
        const double f = motif_function_eval(x, chi, t, params) *
                         motif_function_eval(y, chi, t, params);
        const double w = f / g;
        sum += w;
        sumsq += w * w;
    }
    const double mean = sum / N;
    const double se = std::sqrt((sumsq / N - mean * mean) / N);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("default_beta values and oligo exponent agreement") {
    CHECK(default_beta(99) == Catch::Approx(980.1));
    CHECK(default_beta(10) == Catch::Approx(10.0));

    for (int L : {10, 100, 1000}) {
        for (double sigma : {1.0, 4.0, 16.0}) {
            const KernelParams params(1, 1.0, default_beta(L), sigma);
            for (int d = 1; d <= L / 10; ++d) {
                const double exponent =
                    params.gamma() * (std::cos(kPi * d / L) - 1.0);
                const double oligo = -d * d / (4.0 * sigma * sigma);
                CHECK(std::abs(exponent - oligo) <= 0.05 * std::abs(oligo));
            }
        }
    }
}

TEST_CASE("linearization identity") {
    const Alphabet dna = Alphabet::dna();
    const EncodedSequence s = encode_sequence("ACG", dna);
    const Eigen::VectorXd a = extract_window(s, 1, 3);
    auto [l0, r0] = linearization_identity_check(a, a, 3);
    CHECK(l0 == 0.0);
    CHECK(r0 == 0.0);

    const EncodedSequence t = encode_sequence("TTA", dna);
    const Eigen::VectorXd b = extract_window(t, 1, 3);
    auto [l1, r1] = linearization_identity_check(a, b, 3);
    CHECK(l1 == Catch::Approx(-3.0));
    CHECK(r1 == Catch::Approx(-3.0));

    // random nPFMs, k = 4, |A| = 20
    SplitRng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        auto random_npfm = [&] {
            Eigen::MatrixXd m(20, 4);
            for (int i = 0; i < 20; ++i)
                for (int j = 0; j < 4; ++j) m(i, j) = rng.next_double();
            for (int j = 0; j < 4; ++j) m.col(j) /= m.col(j).norm();
            return flatten_npfm(m);
        };
        auto [lhs, rhs] = linearization_identity_check(random_npfm(), random_npfm(), 4);
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("gram export formats") {
    const Alphabet dna = Alphabet::dna();
    SplitRng rng(55);
    LabeledDataset ds;
    ds.alphabet = dna;
    ds.class_names = {"a", "b"};
    for (int i = 0; i < 3; ++i)
        ds.sequences.push_back(encode_sequence(random_dna(rng, 6), dna, strf("s%d", i), i % 2));
    const KernelParams params(2, 1.0, 3.0, 1.0);
    const Eigen::MatrixXd g = gram(ds, params);

    std::ostringstream csv;
    write_gram_csv(g, csv);
    const std::string text = csv.str();
    CHECK(text.rfind("n=3\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);

    std::ostringstream svm;
    write_gram_svm(g, {0, 1, 0}, svm);
    const std::string stext = svm.str();
    CHECK(stext.rfind("0 0:1 1:", 0) == 0);
    CHECK(stext.find("\n1 0:2 1:") != std::string::npos);
}
