#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "corpus.hpp"
#include "ebfc/integrators.hpp"
#include "ebfc/mna.hpp"
#include "support.hpp"

using namespace ebfc;
using namespace ebfc::test;

namespace {

const std::filesystem::path corpus_root = std::filesystem::path(EBFC_SOURCE_DIR) / "tests" / "netlists";

std::string random_netlist(Rng& rng) {
    const Index nodes = rand_int(rng, 1, 6);
    std::ostringstream os;
    os.precision(17);
    std::uniform_real_distribution<double> val(0.1, 10.0);
    int count = 0;
    auto node = [&](Index k) { return k == 0 ? std::string("0") : "n" + std::to_string(k); };
    // A spanning tree to ground keeps every node attached.
    for (Index k = 1; k <= nodes; ++k) {
        const Index parent = rand_int(rng, 0, k - 1);
        const char* cards = "RCL";
        os << cards[rand_int(rng, 0, 2)] << ++count << ' ' << node(k) << ' ' << node(parent) << ' ' << val(rng) << '\n';
    }
    const Index extra = rand_int(rng, 0, 6);
    for (Index e = 0; e < extra; ++e) {
        const Index a = rand_int(rng, 0, nodes);
        Index b = rand_int(rng, 0, nodes);
        if (a == b) b = (a + 1) % (nodes + 1);
        const char* cards = "RCLIV";
        const char c = cards[rand_int(rng, 0, 4)];
        os << c << ++count << ' ' << node(a) << ' ' << node(b) << ' ';
        if (c == 'I' || c == 'V') os << "SIN 0 " << val(rng) << ' ' << val(rng) * 1e3 << '\n';
        else os << val(rng) << '\n';
    }
    return os.str();
}

}  // namespace

TEST_CASE("annotated corpus parses and rejects as declared") {
    const auto results = check_corpus(corpus_root);
    int valid = 0, invalid = 0;
    for (const auto& r : results) {
        INFO(r.file << ": " << r.detail);
        CHECK(r.ok);
        (r.expected_valid ? valid : invalid)++;
    }
    CHECK(valid >= 30);
    CHECK(invalid >= 20);
}

TEST_CASE("grammar examples") {
    const auto c = parse_netlist("C1 1 0 1u\n");
    REQUIRE(c.elements.size() == 1);
    CHECK(c.elements[0].kind == ElementKind::capacitor);
    CHECK(c.elements[0].value == Catch::Approx(1e-6).epsilon(1e-15));

    const auto v = parse_netlist("V1 1 0 SIN 0 1 50k\n");
    CHECK(v.elements[0].waveform(5e-6) == Catch::Approx(std::sin(2 * std::numbers::pi * 50e3 * 5e-6)).epsilon(1e-14));

    try {
        parse_netlist("Q1 1 0 5\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
        CHECK(e.column() == 1);
    }

    CHECK(*detail::parse_number("2.2k") == Catch::Approx(2200.0).epsilon(1e-15));
    CHECK(*detail::parse_number("3M") == 3e6);
    CHECK(*detail::parse_number("4.7p") == Catch::Approx(4.7e-12).epsilon(1e-15));
    CHECK_FALSE(detail::parse_number("1e"));
    CHECK_FALSE(detail::parse_number("k"));
    CHECK_FALSE(detail::parse_number("1x"));

    const auto d = parse_netlist("R1 1 0 1\n.tran 0.1u 20u\n.method trapezoidal\n");
    CHECK(*d.tau == Catch::Approx(1e-7).epsilon(1e-15));
    CHECK(*d.t_end == Catch::Approx(2e-5).epsilon(1e-15));
    CHECK(*d.method == "trapezoidal");
    CHECK(parse_netlist("").elements.empty());
}

TEST_CASE("round-trip on random netlists") {
    Rng rng(17);
    for (int trial = 0; trial < 120; ++trial) {
        const auto text = random_netlist(rng);
        INFO(text);
        const auto a = parse_netlist(text);
        const auto b = parse_netlist(print_netlist(a));
        REQUIRE(a == b);
        REQUIRE(print_netlist(a) == print_netlist(b));
    }
}

TEST_CASE("incidence matrices") {
    const auto nl = parse_netlist("I1 0 1 DC 1\nR1 1 2 2\nC1 2 0 3\nL1 1 0 4\nV1 2 1 DC 1\n");
    const auto inc = build_incidence(nl);
    CHECK(inc.nodes == std::vector<std::string>{"1", "2"});
    CHECK(to_dense(inc.A_R) == (Mat(2, 1) << 1, -1).finished());
    CHECK(to_dense(inc.A_C) == (Mat(2, 1) << 0, 1).finished());
    CHECK(to_dense(inc.A_L) == (Mat(2, 1) << 1, 0).finished());
    CHECK(to_dense(inc.A_I) == (Mat(2, 1) << -1, 0).finished());
    CHECK(to_dense(inc.A_V) == (Mat(2, 1) << -1, 1).finished());
    CHECK(inc.G(0) == 0.5);
    CHECK(inc.m() == 2);
    const auto sys = mna_system(inc);
    CHECK(sys.partition == Partition{0, 3, 1, 2});
    // Current enters node 1.
    CHECK(to_dense(sys.B).col(0).head(2) == (Vec(2) << 1, 0).finished());

    try {
        build_incidence(parse_netlist("R1 1 0 1\nR2 2 3 1\n"));
        FAIL("expected StructureError");
    } catch (const StructureError& e) {
        CHECK(std::string(e.what()).find("floating node '2'") != std::string::npos);
    }

    // Field port slots: stranded and foil in the current block, solid in the voltage block.
    const auto f = build_incidence(parse_netlist(".model m x\nI1 0 1 1\nF1 1 0 solid m 0\nF2 1 2 foil m 0\nR1 2 0 1\nF3 2 0 stranded m 1\n"));
    CHECK(f.names_I == std::vector<std::string>{"F3", "F2", "I1"});
    CHECK(f.names_V == std::vector<std::string>{"F1"});
    REQUIRE(f.field_ports.size() == 3);
    CHECK(f.field_ports[0].input_index == 3);
    CHECK(f.field_ports[1].input_index == 1);
    CHECK(f.field_ports[2].input_index == 0);
}

TEST_CASE("random circuits are valid energy systems") {
    Rng rng(23);
    for (int trial = 0; trial < 120; ++trial) {
        const auto sys = mna_system(build_incidence(parse_netlist(random_netlist(rng))));
        const auto rep = validate(sys);
        INFO(rep.summary());
        REQUIRE(rep.ok);
        const Mat J = to_dense(sys.J);
        REQUIRE((J + J.transpose()).norm() == 0.0);
        REQUIRE(min_eig(to_dense(sys.E)) >= -1e-12 * std::max(1.0, to_dense(sys.E).norm()));
    }
}

TEST_CASE("LC and RC closed forms") {
    {
        const auto inc = build_incidence(parse_netlist("C1 1 0 1\nL1 1 0 1\n"));
        const auto sys = mna_system(inc);
        Vec z0(2);
        z0 << 1.0, 0.0;
        const auto tr = simulate(sys, z0, inc.source_inputs(), 1e-3, 2.0, Method::make(MethodTag::trapezoidal));
        double err = 0.0;
        for (std::size_t k = 0; k < tr.size(); ++k) {
            const double t = tr.times[k];
            err = std::max({err, std::abs(tr.states[k](0) - std::cos(t)), std::abs(tr.states[k](1) - std::sin(t))});
        }
        CHECK(err <= 1e-6);
    }
    {
        const auto inc = build_incidence(parse_netlist("V1 1 0 DC 1\nR1 1 2 1\nC1 2 0 1\n"));
        const auto sys = mna_system(inc);
        const auto u = inc.source_inputs();
        const auto init = consistent_init(sys, Vec::Zero(sys.n()), u(0.0), {false, true, false});
        CHECK(init.z(0) == Catch::Approx(1.0).epsilon(1e-14));
        CHECK(init.z(1) == 0.0);
        const auto tr = simulate(sys, init.z, u, 1e-3, 2.0, Method::make(MethodTag::trapezoidal));
        double err = 0.0;
        for (std::size_t k = 0; k < tr.size(); ++k)
            err = std::max(err, std::abs(tr.states[k](1) - (1.0 - std::exp(-tr.times[k]))));
        CHECK(err <= 1e-6);
        // Source current: j_V = -(v - v_C)/R in the passive convention of the V branch.
        const Vec& zend = tr.states.back();
        CHECK(zend(2) == Catch::Approx(-(1.0 - zend(1))).epsilon(1e-9));
    }
}

TEST_CASE("Kirchhoff current law along a trajectory") {
    const std::string text = "I1 0 1 SIN 0 1 1k\nR1 1 2 2\nC1 2 0 1m\nL1 1 0 0.5m\nC2 1 2 2m\nR2 2 0 3\n";
    const auto nl = parse_netlist(text);
    const auto inc = build_incidence(nl);
    const auto sys = mna_system(inc);
    const auto u = inc.source_inputs();
    const double tau = 1e-5;
    const auto tr = simulate(sys, Vec::Zero(sys.n()), u, tau, 2e-3, Method::make(MethodTag::trapezoidal));
    std::map<std::string, Index> row;
    for (std::size_t k = 0; k < inc.nodes.size(); ++k) row[inc.nodes[k]] = static_cast<Index>(k);
    double worst = 0.0, scale = 0.0;
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
        const Vec zm = 0.5 * (tr.states[k] + tr.states[k + 1]);
        const Vec zd = (tr.states[k + 1] - tr.states[k]) / tau;
        const double isrc = 0.5 * (u(tr.times[k])(0) + u(tr.times[k + 1])(0));
        auto phi = [&](const Vec& z, const std::string& n) { return n == "0" ? 0.0 : z(row.at(n)); };
        Vec leaving = Vec::Zero(static_cast<Index>(inc.nodes.size()));
        Index lcount = 0;
        for (const auto& e : nl.elements) {
            double i = 0.0;
            switch (e.kind) {
                case ElementKind::resistor: i = (phi(zm, e.n_plus) - phi(zm, e.n_minus)) / e.value; break;
                case ElementKind::capacitor: i = e.value * (phi(zd, e.n_plus) - phi(zd, e.n_minus)); break;
                case ElementKind::inductor: i = zm(static_cast<Index>(inc.nodes.size()) + lcount++); break;
                case ElementKind::isource: i = isrc; break;
                default: break;
            }
            if (e.n_plus != "0") leaving(row.at(e.n_plus)) += i;
            if (e.n_minus != "0") leaving(row.at(e.n_minus)) -= i;
            scale = std::max(scale, std::abs(i));
        }
        worst = std::max(worst, leaving.lpNorm<Eigen::Infinity>());
    }
    CHECK(scale > 1e-3);
    CHECK(worst <= 1e-10 * scale);
}

TEST_CASE("discrete energy balance and singular storage") {
    const auto inc = build_incidence(parse_netlist("V1 1 0 SIN 0 1 1k\nR1 1 2 1\nL1 2 3 1m\nC1 3 0 1m\nR2 3 0 5\n"));
    const auto sys = mna_system(inc);
    const auto init = consistent_init(sys, Vec::Zero(sys.n()), inc.source_inputs()(0.0));
    for (auto tag : {MethodTag::midpoint, MethodTag::trapezoidal}) {
        const auto tr = simulate(sys, init.z, inc.source_inputs(), 1e-5, 2e-3, Method::make(tag));
        const auto audit = energy_audit(sys, tr);
        CHECK(audit.balance_holds);
        CHECK(audit.dissipation_inequality_holds);
    }

    // No storage at all: E = 0 and phi follows the source exactly.
    const auto r = build_incidence(parse_netlist("V1 1 0 SIN 0 2 1k\nR1 1 0 4\n"));
    const auto rs = mna_system(r);
    CHECK(to_dense(rs.E).norm() == 0.0);
    const auto u = r.source_inputs();
    const auto z0 = consistent_init(rs, Vec::Zero(rs.n()), u(0.0)).z;
    const auto tr = simulate(rs, z0, u, 1e-5, 1e-3, Method::make(MethodTag::implicit_euler));
    for (std::size_t k = 0; k < tr.size(); ++k) {
        CHECK(tr.states[k](0) == Catch::Approx(u(tr.times[k])(0)).margin(1e-12));
        CHECK(tr.states[k](1) == Catch::Approx(-u(tr.times[k])(0) / 4.0).margin(1e-12));
    }
}
