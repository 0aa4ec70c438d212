#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "ebfc/conductors.hpp"
#include "ebfc/coupling.hpp"
#include "ebfc/integrators.hpp"
#include "field_fixtures.hpp"
#include "support.hpp"

using namespace ebfc;
using namespace ebfc::test;

namespace {

struct RandomField {
    SpMat M, K;
};

// PSD conductivity with a zero block (non-conducting dofs), SPD stiffness.
RandomField random_field(Rng& rng, Index n) {
    const Index nc = std::max<Index>(1, n / 2);
    Mat M = Mat::Zero(n, n);
    M.topLeftCorner(nc, nc) = rand_psd(rng, nc, nc) + 0.1 * Mat::Identity(nc, nc);
    return {to_sparse(M), to_sparse(rand_spd(rng, n))};
}

// Support of M: the first max(1, n/2) rows.
Mat column_in_support(Rng& rng, Index n, Index cols) {
    Mat chi = Mat::Zero(n, cols);
    chi.topRows(std::max<Index>(1, n / 2)) = rand_mat(rng, std::max<Index>(1, n / 2), cols);
    return chi;
}

}  // namespace

TEST_CASE("conductor constructors produce valid systems") {
    const auto p = small_problem(1e6, 100.0);
    const auto str = stranded_system(coil_stranded(p, 10.0));
    const auto sol = solid_system(bar_solid(p));
    const auto foil = foil_system(foil_from_solid(bar_solid(p)));
    for (const auto* s : {&str, &sol, &foil}) {
        const auto rep = validate(*s);
        INFO(rep.summary());
        CHECK(rep.ok);
    }
    CHECK(str.partition == Partition{p.field.dofs.size(), 0, 1, 1});
    CHECK(foil.partition == Partition{p.field.dofs.size(), 0, 2, 1});

    Rng rng(100);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = rand_int(rng, 2, 8), k = rand_int(rng, 1, 3);
        const auto f = random_field(rng, n);
        const Mat X = rand_mat(rng, n, k);
        const Mat Rs = rand_psd(rng, k, k);
        const auto s1 = stranded_system({f.M, f.K, X, Rs});
        const auto solid = SolidModel::make(f.M, f.K, column_in_support(rng, n, k));
        const auto s2 = solid_system(solid);
        const auto s3 = foil_system(synth_foil(f.M, f.K, k, 1000 + static_cast<std::uint64_t>(trial)));
        REQUIRE(validate(s1).ok);
        REQUIRE(validate(s2).ok);
        REQUIRE(validate(s3).ok);
        REQUIRE(solid_factorization_defect(solid, s2) <= 1e-12 * std::max(1.0, to_dense(s2.R).norm()));
    }
}

TEST_CASE("lossless stranded conductor has R = 0") {
    Rng rng(2);
    const Index n = 5;
    const Mat X = rand_mat(rng, n, 2);
    const auto s = stranded_system({zeros(n, n), to_sparse(rand_spd(rng, n)), X, Mat::Zero(2, 2)});
    CHECK(s.R.nonZeros() == 0);
    CHECK(max_abs(to_dense(s.J) + to_dense(s.J).transpose()) == 0.0);
    CHECK_THROWS_AS(stranded_system({zeros(n, n), to_sparse(rand_spd(rng, n)), X, -Mat::Identity(2, 2)}),
                    StructureError);
    CHECK_THROWS_AS(stranded_system({zeros(n, n), to_sparse(rand_spd(rng, n)), rand_mat(rng, n + 1, 1), Mat::Zero(1, 1)}),
                    StructureError);
}

TEST_CASE("solid conductor: factorized R, zero coupling, DC conductance") {
    const auto p = small_problem(1e6, 0.0);
    const auto s = bar_solid(p);
    const auto sys = solid_system(s);
    CHECK(solid_factorization_defect(s, sys) <= 1e-12 * to_dense(sys.R).norm());
    CHECK(s.G(0, 0) > 0.0);

    // chi = 0 leaves R = blockdiag(M_sigma, 0).
    const auto z = SolidModel::make(s.M_sigma, s.K_nu, Mat::Zero(s.chi.rows(), 1));
    const Mat R = to_dense(solid_system(z).R);
    const Index nw = s.chi.rows();
    CHECK((R.topLeftCorner(nw, nw) - to_dense(s.M_sigma)).norm() == 0.0);
    CHECK(R.rightCols(1).norm() == 0.0);
    CHECK(R.bottomRows(1).norm() == 0.0);

    // Static state: K a = M chi v, a' = 0, driven by i = G v.
    const double v = 0.37;
    Eigen::SimplicialLDLT<SpMat> ldlt(s.K_nu);
    Vec state(nw + 1);
    state.head(nw) = ldlt.solve(Vec(s.M_sigma * s.chi.col(0) * v));
    state(nw) = v;
    const Vec u = Vec::Constant(1, s.G(0, 0) * v);
    const Vec res = dae_residual(sys, state, Vec::Zero(nw + 1), u);
    CHECK(res.norm() <= 1e-12 * std::max(1.0, (s.K_nu * state.head(nw)).norm()));
    CHECK(output(sys, Vec::Zero(nw), state)(0) == Catch::Approx(v).epsilon(1e-15));
}

TEST_CASE("foil checks") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = rand_int(rng, 2, 8), np = rand_int(rng, 1, 3);
        const auto f = random_field(rng, n);
        const auto foil = synth_foil(f.M, f.K, np, static_cast<std::uint64_t>(trial));
        REQUIRE(max_abs(foil.G_foil - foil.G_foil.transpose()) <= 1e-12 * foil.G_foil.norm());
        const auto chk = check_foil(foil);
        REQUIRE(chk.column_space_residual <= 1e-10);
        REQUIRE(chk.min_schur_eig >= -1e-10 * foil.G_foil.norm());
        REQUIRE(validate(foil_system(foil)).ok);
    }
    const auto f = random_field(rng, 4);
    auto foil = synth_foil(f.M, f.K, 1, 9);
    auto smaller = foil;
    smaller.G_foil *= 0.5;
    CHECK_THROWS_AS(foil_system(smaller), StructureError);
    auto outside = foil;
    outside.X_foil(3, 0) += 1.0;  // row outside the support of M
    CHECK_THROWS(foil_system(outside));

    // Non-conducting foil: everything vanishes.
    const auto dead = synth_foil(zeros(4, 4), f.K, 2, 1);
    CHECK(dead.X_foil.norm() == 0.0);
    CHECK(dead.G_foil.norm() == 0.0);
}

TEST_CASE("a single-column foil behaves like the equivalent solid conductor") {
    const auto p = small_problem(1e6, 0.0);
    const auto solid = bar_solid(p);
    const auto foil = foil_from_solid(solid);
    auto run = [&](FieldKind kind) {
        const std::string net = std::string(".model m x\nI1 0 1 SIN 0 1 20k\nR1 1 0 0.001\nF1 1 0 ") +
                                to_string(kind) + " m 0\n";
        const auto inc = build_incidence(parse_netlist(net));
        const auto circuit = mna_system(inc);
        const auto cond = kind == FieldKind::solid ? solid_system(solid) : foil_system(foil);
        const auto cs = couple(circuit, {cond}, {kind}, bind_ports(inc, {"m"}));
        REQUIRE(validate(cs.system).ok);
        const auto u = coupled_inputs(cs, inc.source_inputs());
        const auto tr = simulate(cs.system, Vec::Zero(cs.system.n()), u, 0.1e-6, 50e-6, Method::make(MethodTag::trapezoidal));
        std::vector<Vec> a;
        std::vector<double> phi;
        const Index nw = solid.chi.rows();
        for (const auto& z : tr.states) {
            a.push_back(substate(z, cs.layout.conductor_states[0]).head(nw));
            phi.push_back(z(cs.layout.circuit_states[0]));
        }
        return std::pair{a, phi};
    };
    const auto [a_s, phi_s] = run(FieldKind::solid);
    const auto [a_f, phi_f] = run(FieldKind::foil);
    REQUIRE(a_s.size() == 501);
    double amax = 0.0, pmax = 0.0, da = 0.0, dp = 0.0;
    for (std::size_t k = 0; k < a_s.size(); ++k) {
        amax = std::max(amax, a_s[k].lpNorm<Eigen::Infinity>());
        pmax = std::max(pmax, std::abs(phi_s[k]));
        da = std::max(da, (a_s[k] - a_f[k]).lpNorm<Eigen::Infinity>());
        dp = std::max(dp, std::abs(phi_s[k] - phi_f[k]));
    }
    CHECK(amax > 0.0);
    CHECK(pmax > 0.0);
    CHECK(da <= 1e-10 * amax);
    CHECK(dp <= 1e-10 * pmax);
}

TEST_CASE("stranded power balance against the exact midpoint input converges at second order") {
    const auto p = small_problem(0.0, 1e4);
    auto model = coil_stranded(p, 10.0);
    model.R_str = Mat::Constant(1, 1, 0.5);
    const auto sys = stranded_system(model);
    InputSignal u(1);
    u[0] = Waveform(Sinusoid{0.0, 1.0, 10e3, 0.0});
    std::vector<double> defects;
    for (double tau : {1e-6, 0.5e-6, 0.25e-6}) {
        const auto tr = simulate(sys, Vec::Zero(sys.n()), u, tau, 40e-6, Method::make(MethodTag::trapezoidal));
        double cum = 0.0;
        for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
            const double t = tr.times[k];
            const auto e = step_energy(sys, tr.states[k], tr.states[k + 1], u(t + 0.5 * tau), tau);
            cum += e.dH - e.supply + e.dissipation;
        }
        defects.push_back(std::abs(cum));
    }
    REQUIRE(defects[0] > 0.0);
    CHECK(defects[0] / defects[1] == Catch::Approx(4.0).margin(0.4));
    CHECK(defects[1] / defects[2] == Catch::Approx(4.0).margin(0.4));
}

TEST_CASE("lumped inductance") {
    Rng rng(8);
    const auto K = to_sparse(rand_spd(rng, 6));
    CHECK(lumped_inductance(K, Mat::Zero(6, 2)).norm() == 0.0);
    const Mat X = rand_mat(rng, 6, 3);
    const Mat L = lumped_inductance(K, X);
    const Mat oracle = X.transpose() * to_dense(K).inverse() * X;
    CHECK((L - oracle).norm() <= 1e-12 * oracle.norm());
    CHECK(min_eig(L) >= -1e-12 * L.norm());
    CHECK_THROWS_AS(lumped_inductance(K, Mat::Ones(5, 1)), StructureError);
    CHECK_THROWS_AS(lumped_inductance(zeros(3, 3), Mat::Ones(3, 1)), NumericalError);
}

TEST_CASE("import and export round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ebfc_conductor_io";
    std::filesystem::remove_all(dir);
    Rng rng(12);
    const auto f = random_field(rng, 6);
    std::vector<ConductorModel> models{StrandedModel{f.M, f.K, rand_mat(rng, 6, 2), rand_psd(rng, 2, 2)},
                                       SolidModel::make(f.M, f.K, column_in_support(rng, 6, 1)),
                                       synth_foil(f.M, f.K, 2, 3)};
    for (std::size_t k = 0; k < models.size(); ++k) {
        const auto sub = dir / std::to_string(k);
        export_conductor(models[k], sub);
        const auto back = import_conductor(sub);
        CHECK(back.index() == models[k].index());
        CHECK(std::string(kind_name(back)) == kind_name(models[k]));
        CHECK(port_count(back) == port_count(models[k]));
        const auto a = conductor_system(models[k], "x"), b = conductor_system(back, "x");
        CHECK(to_dense(a.J - b.J).norm() == 0.0);
        CHECK(to_dense(a.R - b.R).norm() == 0.0);
        CHECK(to_dense(a.M1 - b.M1).norm() == 0.0);
        CHECK(to_dense(a.B - b.B).norm() == 0.0);
    }
    {
        std::ofstream bad(dir / "bad.txt");
        bad << "kind = stranded\nnot a pair\n";
    }
    try {
        import_conductor(dir / "bad.txt");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    std::filesystem::remove_all(dir);
}
