#pragma once

// Energy-based DAE systems with quadratic Hamiltonian:
//
//   [ M1 z1 ; E z2' ; 0 ] = (J - R) [ z1' ; S z2 ; z3 ] + B u,
//   y = B^T [ z1' ; S z2 ; z3 ],     H(z) = 1/2 z1^T M1 z1 + 1/2 z2^T M2 z2,
//
// with J skew, R symmetric positive semi-definite and E^T S = M2.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ebfc/errors.hpp"
#include "ebfc/linalg.hpp"
#include "ebfc/matrix_market.hpp"

namespace ebfc {

struct Partition {
    Index n1 = 0;  ///< gradient-type states
    Index n2 = 0;  ///< dynamic states
    Index n3 = 0;  ///< algebraic states
    Index m = 0;   ///< ports

    Index n() const { return n1 + n2 + n3; }
    friend bool operator==(const Partition&, const Partition&) = default;
};

struct EnergySystem {
    Partition partition;
    SpMat E;   ///< n2 x n2
    SpMat J;   ///< n x n
    SpMat R;   ///< n x n
    SpMat B;   ///< n x m
    SpMat M1;  ///< n1 x n1
    SpMat M2;  ///< n2 x n2
    SpMat S;   ///< n2 x n2, effort e = S z2

    std::vector<std::string> state_names;  ///< optional, length n when present
    std::vector<std::string> port_names;   ///< optional, length m when present

    Index n() const { return partition.n(); }
    Index m() const { return partition.m; }

    std::string state_name(Index i) const {
        if (static_cast<std::size_t>(i) < state_names.size()) return state_names[static_cast<std::size_t>(i)];
        return "z[" + std::to_string(i) + "]";
    }
    std::string port_name(Index i) const {
        if (static_cast<std::size_t>(i) < port_names.size()) return port_names[static_cast<std::size_t>(i)];
        return "y[" + std::to_string(i) + "]";
    }
};

/// Throws StructureError naming the first block whose shape disagrees with
/// the partition.
inline void check_dimensions(const EnergySystem& sys) {
    const auto& p = sys.partition;
    if (p.n1 < 0 || p.n2 < 0 || p.n3 < 0 || p.m < 0) throw StructureError("negative partition entry");
    auto expect = [](const char* name, const SpMat& a, Index r, Index c) {
        if (a.rows() != r || a.cols() != c)
            throw StructureError(std::string("block ") + name + " has shape " + std::to_string(a.rows()) + "x" +
                                 std::to_string(a.cols()) + ", expected " + std::to_string(r) + "x" +
                                 std::to_string(c));
    };
    const Index n = p.n();
    expect("E", sys.E, p.n2, p.n2);
    expect("J", sys.J, n, n);
    expect("R", sys.R, n, n);
    expect("B", sys.B, n, p.m);
    expect("M1", sys.M1, p.n1, p.n1);
    expect("M2", sys.M2, p.n2, p.n2);
    expect("S", sys.S, p.n2, p.n2);
    if (!sys.state_names.empty() && static_cast<Index>(sys.state_names.size()) != n)
        throw StructureError("state_names has " + std::to_string(sys.state_names.size()) + " entries, expected " +
                             std::to_string(n));
    if (!sys.port_names.empty() && static_cast<Index>(sys.port_names.size()) != p.m)
        throw StructureError("port_names has " + std::to_string(sys.port_names.size()) + " entries, expected " +
                             std::to_string(p.m));
}

/// Zero-initialized system of the given partition.
inline EnergySystem make_zero_system(const Partition& p) {
    EnergySystem s;
    s.partition = p;
    s.E = zeros(p.n2, p.n2);
    s.J = zeros(p.n(), p.n());
    s.R = zeros(p.n(), p.n());
    s.B = zeros(p.n(), p.m);
    s.M1 = zeros(p.n1, p.n1);
    s.M2 = zeros(p.n2, p.n2);
    s.S = zeros(p.n2, p.n2);
    return s;
}

struct Tolerances {
    double skew = 1e-10;  ///< relative to the Frobenius norm of the checked block
    double psd = 1e-10;
};

struct ValidationReport {
    double skew_defect = 0.0;    ///< max |J + J^T|
    double sym_defect = 0.0;     ///< max |R - R^T|
    double min_R_eig = 0.0;      ///< smallest eigenvalue of (R + R^T)/2
    double effort_defect = 0.0;  ///< max |E^T S - M2|
    double hess_sym_defect = 0.0;  ///< max of |M1 - M1^T|, |M2 - M2^T|
    SpectrumMethod psd_method = SpectrumMethod::dense_eigen;
    bool ok = true;
    std::vector<std::string> failures;

    std::string summary() const {
        std::ostringstream os;
        os.precision(6);
        os << "skew_defect=" << skew_defect << " sym_defect=" << sym_defect << " min_R_eig=" << min_R_eig
           << " effort_defect=" << effort_defect << " hess_sym_defect=" << hess_sym_defect
           << " ok=" << (ok ? "true" : "false");
        for (const auto& f : failures) os << "\n  violated: " << f;
        return os.str();
    }
};

inline ValidationReport validate(const EnergySystem& sys, const Tolerances& tol = {}) {
    check_dimensions(sys);
    ValidationReport rep;

    const SpMat Jt = sys.J.transpose();
    rep.skew_defect = max_abs(sys.J + Jt);
    if (rep.skew_defect > tol.skew * frobenius(sys.J)) {
        rep.ok = false;
        rep.failures.push_back("J is not skew-symmetric");
    }

    const SpMat Rt = sys.R.transpose();
    rep.sym_defect = max_abs(sys.R - Rt);
    if (rep.sym_defect > tol.skew * frobenius(sys.R)) {
        rep.ok = false;
        rep.failures.push_back("R is not symmetric");
    }
    const auto spec = check_psd(sys.R, tol.psd);
    rep.min_R_eig = spec.min_eigenvalue;
    rep.psd_method = spec.method;
    if (!spec.psd) {
        rep.ok = false;
        rep.failures.push_back("R is not positive semi-definite");
    }

    const SpMat EtS = SpMat(sys.E.transpose()) * sys.S;
    rep.effort_defect = max_abs(EtS - sys.M2);
    const double effort_scale = std::max(frobenius(sys.M2), frobenius(sys.E) * frobenius(sys.S));
    if (rep.effort_defect > tol.skew * effort_scale) {
        rep.ok = false;
        rep.failures.push_back("effort compatibility E^T S = M2 violated");
    }

    const double d1 = max_abs(sys.M1 - SpMat(sys.M1.transpose()));
    const double d2 = max_abs(sys.M2 - SpMat(sys.M2.transpose()));
    rep.hess_sym_defect = std::max(d1, d2);
    if (d1 > tol.skew * frobenius(sys.M1) || d2 > tol.skew * frobenius(sys.M2)) {
        rep.ok = false;
        rep.failures.push_back("M1/M2 not symmetric");
    }
    return rep;
}

namespace detail {
inline void expect_length(const char* what, Index got, Index want) {
    if (got != want)
        throw StructureError(std::string("length mismatch for ") + what + ": got " + std::to_string(got) +
                             ", expected " + std::to_string(want));
}
}  // namespace detail

inline double hamiltonian(const EnergySystem& sys, const Vec& z) {
    const auto& p = sys.partition;
    detail::expect_length("state", z.size(), p.n());
    const Vec z1 = z.head(p.n1);
    const Vec z2 = z.segment(p.n1, p.n2);
    return 0.5 * z1.dot(sys.M1 * z1) + 0.5 * z2.dot(sys.M2 * z2);
}

/// The flow/effort vector w = [z1'; S z2; z3] that J, R and B act on.
inline Vec structure_vector(const EnergySystem& sys, const Vec& zdot1, const Vec& z) {
    const auto& p = sys.partition;
    detail::expect_length("zdot1", zdot1.size(), p.n1);
    detail::expect_length("state", z.size(), p.n());
    Vec w(p.n());
    w.head(p.n1) = zdot1;
    w.segment(p.n1, p.n2) = sys.S * z.segment(p.n1, p.n2);
    w.tail(p.n3) = z.tail(p.n3);
    return w;
}

inline Vec dae_residual(const EnergySystem& sys, const Vec& z, const Vec& zdot, const Vec& u) {
    const auto& p = sys.partition;
    detail::expect_length("state", z.size(), p.n());
    detail::expect_length("state derivative", zdot.size(), p.n());
    detail::expect_length("input", u.size(), p.m);
    Vec lhs = Vec::Zero(p.n());
    lhs.head(p.n1) = sys.M1 * z.head(p.n1);
    lhs.segment(p.n1, p.n2) = sys.E * zdot.segment(p.n1, p.n2);
    const Vec w = structure_vector(sys, zdot.head(p.n1), z);
    return lhs - (sys.J * w - sys.R * w) - sys.B * u;
}

inline Vec output(const EnergySystem& sys, const Vec& zdot1, const Vec& z) {
    return sys.B.transpose() * structure_vector(sys, zdot1, z);
}

struct PowerTerms {
    double dissipation = 0.0;  ///< w^T R w
    double supply = 0.0;       ///< <y, u>
};

inline PowerTerms power_terms(const EnergySystem& sys, const Vec& zdot1, const Vec& z, const Vec& u) {
    detail::expect_length("input", u.size(), sys.m());
    const Vec w = structure_vector(sys, zdot1, z);
    return {w.dot(sys.R * w), (sys.B.transpose() * w).dot(u)};
}

// ---------------------------------------------------------------------------
// Serialization: a directory of Matrix Market files plus `partition.txt`
// holding the single line `partition n1 n2 n3 m`. Optional `states.txt` and
// `ports.txt` list labels one per line.

inline void save(const EnergySystem& sys, const std::filesystem::path& dir) {
    check_dimensions(sys);
    std::filesystem::create_directories(dir);
    const auto& p = sys.partition;
    {
        std::ofstream os(dir / "partition.txt");
        os << "partition " << p.n1 << ' ' << p.n2 << ' ' << p.n3 << ' ' << p.m << '\n';
    }
    mm::write_file(dir / "E.mtx", sys.E);
    mm::write_file(dir / "J.mtx", sys.J);
    mm::write_file(dir / "R.mtx", sys.R);
    mm::write_file(dir / "B.mtx", sys.B);
    mm::write_file(dir / "M1.mtx", sys.M1);
    mm::write_file(dir / "M2.mtx", sys.M2);
    mm::write_file(dir / "S.mtx", sys.S);
    auto write_lines = [&](const char* name, const std::vector<std::string>& lines) {
        if (lines.empty()) return;
        std::ofstream os(dir / name);
        for (const auto& l : lines) os << l << '\n';
    };
    write_lines("states.txt", sys.state_names);
    write_lines("ports.txt", sys.port_names);
}

inline EnergySystem load(const std::filesystem::path& dir) {
    std::ifstream hs(dir / "partition.txt");
    if (!hs) throw ParseError("missing partition.txt in " + dir.string());
    std::string tag;
    Partition p;
    if (!(hs >> tag >> p.n1 >> p.n2 >> p.n3 >> p.m) || tag != "partition")
        throw ParseError("partition.txt: expected 'partition n1 n2 n3 m'", 1);
    EnergySystem s;
    s.partition = p;
    s.E = mm::read_file(dir / "E.mtx");
    s.J = mm::read_file(dir / "J.mtx");
    s.R = mm::read_file(dir / "R.mtx");
    s.B = mm::read_file(dir / "B.mtx");
    s.M1 = mm::read_file(dir / "M1.mtx");
    s.M2 = mm::read_file(dir / "M2.mtx");
    s.S = mm::read_file(dir / "S.mtx");
    auto read_lines = [&](const char* name) {
        std::vector<std::string> out;
        std::ifstream is(dir / name);
        for (std::string l; std::getline(is, l);)
            if (!l.empty()) out.push_back(l);
        return out;
    };
    s.state_names = read_lines("states.txt");
    s.port_names = read_lines("ports.txt");
    check_dimensions(s);
    return s;
}

}  // namespace ebfc
