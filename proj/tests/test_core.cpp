#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "ebfc/energy_system.hpp"
#include "ebfc/matrix_market.hpp"
#include "support.hpp"

using namespace ebfc;
using namespace ebfc::test;

namespace {

EnergySystem lc_mna(double C, double L) {
    // z2 = [phi; j_L], one capacitor and one inductor from node 1 to ground.
    EnergySystem s = make_zero_system({0, 2, 0, 0});
    Mat E(2, 2);
    E << C, 0, 0, L;
    Mat J(2, 2);
    J << 0, -1, 1, 0;
    s.E = to_sparse(E);
    s.M2 = s.E;
    s.S = identity(2);
    s.J = to_sparse(J);
    return s;
}

}  // namespace

TEST_CASE("validate accepts an exactly skew J") {
    EnergySystem s = make_zero_system({2, 0, 0, 0});
    Mat J(2, 2);
    J << 0, 1, -1, 0;
    s.J = to_sparse(J);
    s.M1 = identity(2);
    const auto rep = validate(s);
    CHECK(rep.ok);
    CHECK(rep.skew_defect == 0.0);
}

TEST_CASE("validate reports the exact symmetry defect of R") {
    EnergySystem s = make_zero_system({2, 0, 0, 0});
    Mat R(2, 2);
    R << 1, 2, 0, 1;
    s.R = to_sparse(R);
    s.M1 = identity(2);
    const auto rep = validate(s);
    CHECK_FALSE(rep.ok);
    CHECK(rep.sym_defect == 2.0);
}

TEST_CASE("validate accepts Gram matrices and agrees with an eigen oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat X = rand_mat(rng, 3, 5);
        const Mat R = X.transpose() * X;
        EnergySystem s = make_zero_system({0, 0, 5, 0});
        s.R = to_sparse(R);
        const auto rep = validate(s);
        const double oracle = min_eig(0.5 * (R + R.transpose()));
        CHECK(rep.ok);
        CHECK(rep.min_R_eig >= -1e-10 * R.norm());
        CHECK(std::abs(rep.min_R_eig - oracle) <= 1e-10 * R.norm());
    }
}

TEST_CASE("validate flags a negative eigenvalue and a broken effort identity") {
    EnergySystem s = make_zero_system({0, 1, 1, 0});
    s.R = to_sparse(Mat(Vec::Constant(2, -1.0).asDiagonal()));
    CHECK_FALSE(validate(s).ok);

    EnergySystem t = make_zero_system({0, 1, 0, 0});
    t.E = identity(1);
    t.S = identity(1);
    t.M2 = 2.0 * identity(1);
    const auto rep = validate(t);
    CHECK_FALSE(rep.ok);
    CHECK(rep.effort_defect == 1.0);
}

TEST_CASE("dimension mismatches name the offending block") {
    EnergySystem s = make_zero_system({1, 1, 1, 1});
    s.B = zeros(2, 1);
    try {
        validate(s);
        FAIL("expected StructureError");
    } catch (const StructureError& e) {
        CHECK(std::string(e.what()).find('B') != std::string::npos);
    }
    EnergySystem t = make_zero_system({1, 1, 1, 1});
    t.E = zeros(2, 2);
    CHECK_THROWS_AS(validate(t), StructureError);
}

TEST_CASE("hamiltonian") {
    EnergySystem s = make_zero_system({1, 0, 0, 0});
    s.M1 = identity(1);
    CHECK(hamiltonian(s, Vec::Constant(1, 2.0)) == 2.0);
    CHECK_THROWS_AS(hamiltonian(s, Vec::Zero(2)), StructureError);

    // Capacitor charged to 1 V: H = C v0^2 / 2.
    const auto lc = lc_mna(100e-6, 5e-7);
    Vec z(2);
    z << 1.0, 0.0;
    CHECK(hamiltonian(lc, z) == Catch::Approx(50e-6).epsilon(1e-15));

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_partition(rng);
        const auto sys = random_system(rng, p);
        const Vec zz = rand_vec(rng, p.n());
        const Mat M1 = to_dense(sys.M1), M2 = to_dense(sys.M2);
        double brute = 0.0;
        for (Index i = 0; i < p.n1; ++i)
            for (Index j = 0; j < p.n1; ++j) brute += 0.5 * zz(i) * M1(i, j) * zz(j);
        for (Index i = 0; i < p.n2; ++i)
            for (Index j = 0; j < p.n2; ++j) brute += 0.5 * zz(p.n1 + i) * M2(i, j) * zz(p.n1 + j);
        CHECK(rel(hamiltonian(sys, zz), brute) <= 1e-13);

        // Algebraic states carry no energy.
        Vec moved = zz;
        moved.tail(p.n3) = rand_vec(rng, p.n3, -100, 100);
        CHECK(hamiltonian(sys, moved) == hamiltonian(sys, zz));
    }
}

TEST_CASE("dae_residual") {
    Rng rng(3);
    const auto sys = random_system(rng, {2, 2, 1, 2});
    CHECK(dae_residual(sys, Vec::Zero(5), Vec::Zero(5), Vec::Zero(2)).norm() == 0.0);

    // Lossless LC, C = L = 1: phi = cos t, j_L = sin t solves C phi' = -j_L, L j' = phi.
    const auto lc = lc_mna(1.0, 1.0);
    for (double t : {0.0, 0.3, 1.7}) {
        Vec z(2), zd(2);
        z << std::cos(t), std::sin(t);
        zd << -std::sin(t), std::cos(t);
        CHECK(dae_residual(lc, z, zd, Vec::Zero(0)).lpNorm<Eigen::Infinity>() <= 1e-12);
    }

    // Perturbing input component k by delta changes the residual by -B delta e_k.
    const Vec z = rand_vec(rng, 5), zd = rand_vec(rng, 5), u = rand_vec(rng, 2);
    Vec u2 = u;
    u2(1) += 0.25;
    const Vec diff = dae_residual(sys, z, zd, u2) - dae_residual(sys, z, zd, u);
    const Vec expect = -0.25 * to_dense(sys.B).col(1);
    CHECK((diff - expect).norm() <= 1e-14);

    // Linearity in (z, zdot, u).
    for (int trial = 0; trial < 20; ++trial) {
        const double a = 1.3, b = -0.7;
        const Vec z1 = rand_vec(rng, 5), d1 = rand_vec(rng, 5), v1 = rand_vec(rng, 2);
        const Vec z2 = rand_vec(rng, 5), d2 = rand_vec(rng, 5), v2 = rand_vec(rng, 2);
        const Vec lhs = dae_residual(sys, a * z1 + b * z2, a * d1 + b * d2, a * v1 + b * v2);
        const Vec rhs = a * dae_residual(sys, z1, d1, v1) + b * dae_residual(sys, z2, d2, v2);
        CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, rhs.norm()));
    }
    CHECK_THROWS_AS(dae_residual(sys, Vec::Zero(4), Vec::Zero(5), Vec::Zero(2)), StructureError);
}

TEST_CASE("output and power terms") {
    Rng rng(5);
    auto sys = random_system(rng, {1, 1, 1, 2});
    sys.B = zeros(3, 2);
    CHECK(output(sys, rand_vec(rng, 1), rand_vec(rng, 3)).norm() == 0.0);

    EnergySystem lossless = make_zero_system({1, 0, 1, 1});
    lossless.M1 = identity(1);
    const auto pt = power_terms(lossless, rand_vec(rng, 1), rand_vec(rng, 2), Vec::Zero(1));
    CHECK(pt.dissipation == 0.0);
    CHECK(pt.supply == 0.0);

    // Dissipation is w^T R w >= 0 for PSD R, compared with an eigendecomposition bound.
    for (int trial = 0; trial < 1000; ++trial) {
        const auto p = random_partition(rng);
        const auto s = random_system(rng, p);
        const Vec zd = rand_vec(rng, p.n1), z = rand_vec(rng, p.n()), u = rand_vec(rng, p.m);
        const auto terms = power_terms(s, zd, z, u);
        const Vec w = structure_vector(s, zd, z);
        const double normR = to_dense(s.R).norm();
        REQUIRE(terms.dissipation >= -1e-12 * normR * w.squaredNorm());
        const Mat Rd = to_dense(s.R);
        Eigen::SelfAdjointEigenSolver<Mat> es(Rd);
        const Vec c = es.eigenvectors().transpose() * w;
        const double oracle = c.dot(es.eigenvalues().cwiseProduct(c));
        REQUIRE(std::abs(terms.dissipation - oracle) <= 1e-12 * std::max(1.0, normR * w.squaredNorm()));
        REQUIRE(std::abs(terms.supply - output(s, zd, z).dot(u)) <= 1e-13 * std::max(1.0, std::abs(terms.supply)));
    }
}

TEST_CASE("save and load round-trip") {
    Rng rng(9);
    auto sys = random_system(rng, {2, 2, 1, 2});
    sys.state_names = {"a", "b", "c", "d", "e"};
    const auto dir = std::filesystem::temp_directory_path() / "ebfc_core_roundtrip";
    std::filesystem::remove_all(dir);
    save(sys, dir);
    const auto back = load(dir);
    CHECK(back.partition == sys.partition);
    CHECK(to_dense(back.J - sys.J).norm() == 0.0);
    CHECK(to_dense(back.E - sys.E).norm() == 0.0);
    CHECK(to_dense(back.B - sys.B).norm() == 0.0);
    CHECK(back.state_names == sys.state_names);
    std::filesystem::remove_all(dir);
}

TEST_CASE("matrix market parse errors carry line numbers") {
    std::istringstream bad("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n");
    try {
        mm::read(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream ok("%%MatrixMarket matrix coordinate real general\n% comment\n2 2 2\n1 1 1.5\n2 1 -2\n");
    const SpMat a = mm::read(ok);
    CHECK(a.coeff(0, 0) == 1.5);
    CHECK(a.coeff(1, 0) == -2.0);
}
