#pragma once

// Conductor models as energy-based systems. All three share z1 = a and
// H = 1/2 a^T K_nu a; they differ in their algebraic states and ports:
//   stranded  z3 = i_str          u = v_str   y = i_str
//   solid     z3 = v_sol          u = i_sol   y = v_sol
//   foil      z3 = [e; i_foil]    u = v_foil  y = i_foil

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <variant>

#include <Eigen/SparseCholesky>

#include "ebfc/energy_system.hpp"
#include "ebfc/fem_axi.hpp"
#include "ebfc/matrix_market.hpp"

namespace ebfc {

struct StrandedModel {
    SpMat M_sigma;  ///< n_w x n_w
    SpMat K_nu;     ///< n_w x n_w
    Mat X;          ///< n_w x n_str winding columns
    Mat R_str;      ///< n_str x n_str winding resistance
};

struct SolidModel {
    SpMat M_sigma;
    SpMat K_nu;
    Mat chi;  ///< n_w x n_sol voltage distribution coefficients; the coupling column is M_sigma chi
    Mat G;    ///< chi^T M_sigma chi

    static SolidModel make(SpMat M_sigma, SpMat K_nu, Mat chi) {
        SolidModel s{std::move(M_sigma), std::move(K_nu), std::move(chi), Mat()};
        s.G = s.chi.transpose() * (s.M_sigma * s.chi);
        s.G = 0.5 * (s.G + s.G.transpose());
        return s;
    }
};

struct FoilModel {
    SpMat M_sigma;
    SpMat K_nu;
    Mat X_foil;  ///< n_w x n_p
    Vec c;       ///< n_p
    Mat G_foil;  ///< n_p x n_p
};

using ConductorModel = std::variant<StrandedModel, SolidModel, FoilModel>;

namespace detail {
inline void check_field_pair(const SpMat& M, const SpMat& K, Index rows_X, const char* who) {
    if (M.rows() != M.cols() || K.rows() != K.cols() || M.rows() != K.rows())
        throw StructureError(std::string(who) + ": M_sigma and K_nu must be square and of equal size");
    if (rows_X != M.rows())
        throw StructureError(std::string(who) + ": coupling matrix has " + std::to_string(rows_X) +
                             " rows, expected " + std::to_string(M.rows()));
}

inline void check_sym_psd(const Mat& a, const char* what, double tol) {
    const double scale = std::max(a.norm(), 1e-300);
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > tol * scale)
        throw StructureError(std::string(what) + " is not symmetric");
    if (a.size() == 0) return;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol * scale)
        throw StructureError(std::string(what) + " is not positive semi-definite (min eigenvalue " +
                             std::to_string(es.eigenvalues().minCoeff()) + ")");
}

inline std::vector<std::string> field_names(const std::string& prefix, Index n) {
    std::vector<std::string> out;
    for (Index i = 0; i < n; ++i) out.push_back(prefix + "a[" + std::to_string(i) + "]");
    return out;
}
}  // namespace detail

/// J = [[0, X], [-X^T, 0]], R = blockdiag(M_sigma, R_str), B = [0; I].
inline EnergySystem stranded_system(const StrandedModel& m, const std::string& name = "str") {
    detail::check_field_pair(m.M_sigma, m.K_nu, m.X.rows(), "stranded_system");
    const Index nw = m.X.rows(), ns = m.X.cols();
    if (m.R_str.rows() != ns || m.R_str.cols() != ns) throw StructureError("stranded_system: R_str has wrong shape");
    detail::check_sym_psd(m.R_str, "R_str", 1e-10);
    EnergySystem s = make_zero_system({nw, 0, ns, ns});
    const SpMat X = to_sparse(m.X);
    s.J = BlockBuilder({nw, ns}, {nw, ns}).set(0, 1, X).set(1, 0, SpMat(X.transpose()), -1.0).build();
    s.R = block_diag({m.M_sigma, to_sparse(m.R_str)});
    s.B = BlockBuilder({nw, ns}, {ns}).set(1, 0, identity(ns)).build();
    s.M1 = m.K_nu;
    s.state_names = detail::field_names(name + ".", nw);
    for (Index k = 0; k < ns; ++k) {
        s.state_names.push_back(name + ".i[" + std::to_string(k) + "]");
        s.port_names.push_back(name + ".port" + std::to_string(k));
    }
    return s;
}

/// J = 0, R = [[M, -M chi], [-chi^T M, G]], B = [0; I].
inline EnergySystem solid_system(const SolidModel& m, const std::string& name = "sol") {
    detail::check_field_pair(m.M_sigma, m.K_nu, m.chi.rows(), "solid_system");
    const Index nw = m.chi.rows(), ns = m.chi.cols();
    if (m.G.rows() != ns || m.G.cols() != ns) throw StructureError("solid_system: G has wrong shape");
    detail::check_sym_psd(m.G, "G_sol", 1e-10);
    EnergySystem s = make_zero_system({nw, 0, ns, ns});
    const SpMat MX = to_sparse(Mat(m.M_sigma * m.chi));
    s.R = BlockBuilder({nw, ns}, {nw, ns})
              .set(0, 0, m.M_sigma)
              .set(0, 1, MX, -1.0)
              .set(1, 0, SpMat(MX.transpose()), -1.0)
              .set(1, 1, to_sparse(m.G))
              .build();
    s.B = BlockBuilder({nw, ns}, {ns}).set(1, 0, identity(ns)).build();
    s.M1 = m.K_nu;
    s.state_names = detail::field_names(name + ".", nw);
    for (Index k = 0; k < ns; ++k) {
        s.state_names.push_back(name + ".v[" + std::to_string(k) + "]");
        s.port_names.push_back(name + ".port" + std::to_string(k));
    }
    return s;
}

/// max |R - [I, -chi]^T M [I, -chi]| for a solid system, the factorization
/// that makes its R semi-definite.
inline double solid_factorization_defect(const SolidModel& m, const EnergySystem& sys) {
    const Index nw = m.chi.rows(), ns = m.chi.cols();
    Mat P(nw, nw + ns);
    P << Mat::Identity(nw, nw), -m.chi;
    const Mat F = P.transpose() * (m.M_sigma * P);
    return (to_dense(sys.R) - F).cwiseAbs().maxCoeff();
}

struct FoilCheck {
    double column_space_residual = 0.0;  ///< relative residual of M_sigma Y = X_foil
    Mat schur;                           ///< G_foil - X_foil^T M_sigma^+ X_foil
    double min_schur_eig = 0.0;
};

inline FoilCheck check_foil(const FoilModel& m, double tol = 1e-10) {
    FoilCheck c;
    const Mat Y = fem::pseudo_solve(m.M_sigma, m.X_foil, tol);
    const double xn = m.X_foil.norm();
    c.column_space_residual = xn == 0.0 ? 0.0 : (Mat(m.M_sigma * Y) - m.X_foil).norm() / xn;
    c.schur = m.G_foil - m.X_foil.transpose() * Y;
    c.schur = 0.5 * (c.schur + c.schur.transpose());
    if (c.schur.size() > 0) {
        Eigen::SelfAdjointEigenSolver<Mat> es(c.schur, Eigen::EigenvaluesOnly);
        c.min_schur_eig = es.eigenvalues().minCoeff();
    }
    return c;
}

/// J couples e and i_foil through c; R = [[M, -X, 0], [-X^T, G, 0], [0, 0, 0]];
/// B selects the i_foil row.
inline EnergySystem foil_system(const FoilModel& m, const std::string& name = "foil") {
    detail::check_field_pair(m.M_sigma, m.K_nu, m.X_foil.rows(), "foil_system");
    const Index nw = m.X_foil.rows(), np = m.X_foil.cols();
    if (m.c.size() != np) throw StructureError("foil_system: c must have n_p entries");
    if (m.G_foil.rows() != np || m.G_foil.cols() != np) throw StructureError("foil_system: G_foil has wrong shape");
    const auto chk = check_foil(m);  // throws on column-space violation
    const double gscale = std::max(m.G_foil.norm(), 1e-300);
    if (chk.min_schur_eig < -1e-10 * gscale)
        throw StructureError("foil_system: G_foil - X_foil^T M_sigma^+ X_foil is not positive semi-definite");
    detail::check_sym_psd(m.G_foil, "G_foil", 1e-10);

    EnergySystem s = make_zero_system({nw, 0, np + 1, 1});
    const SpMat X = to_sparse(m.X_foil);
    const SpMat c = to_sparse(Mat(m.c));
    s.J = BlockBuilder({nw, np, 1}, {nw, np, 1}).set(1, 2, c).set(2, 1, SpMat(c.transpose()), -1.0).build();
    s.R = BlockBuilder({nw, np, 1}, {nw, np, 1})
              .set(0, 0, m.M_sigma)
              .set(0, 1, X, -1.0)
              .set(1, 0, SpMat(X.transpose()), -1.0)
              .set(1, 1, to_sparse(m.G_foil))
              .build();
    s.B = BlockBuilder({nw, np, 1}, {1}).set(2, 0, identity(1)).build();
    s.M1 = m.K_nu;
    s.state_names = detail::field_names(name + ".", nw);
    for (Index k = 0; k < np; ++k) s.state_names.push_back(name + ".e[" + std::to_string(k) + "]");
    s.state_names.push_back(name + ".i");
    s.port_names.push_back(name + ".port0");
    return s;
}

/// Random foil data compatible with a given M_sigma: X_foil = M_sigma W,
/// positive c, G_foil = X_foil^T M_sigma^+ X_foil.
inline FoilModel synth_foil(const SpMat& M_sigma, const SpMat& K_nu, Index n_p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> pos(0.5, 1.5);
    FoilModel f;
    f.M_sigma = M_sigma;
    f.K_nu = K_nu;
    Mat W(M_sigma.rows(), n_p);
    for (Index j = 0; j < n_p; ++j)
        for (Index i = 0; i < W.rows(); ++i) W(i, j) = normal(rng);
    f.X_foil = M_sigma * W;
    f.c.resize(n_p);
    for (Index k = 0; k < n_p; ++k) f.c(k) = pos(rng);
    const Mat Y = fem::pseudo_solve(M_sigma, f.X_foil);
    f.G_foil = f.X_foil.transpose() * Y;
    f.G_foil = 0.5 * (f.G_foil + f.G_foil.transpose());
    return f;
}

/// The n_p = 1 foil model that is equivalent to a single-column solid model.
inline FoilModel foil_from_solid(const SolidModel& s) {
    if (s.chi.cols() != 1) throw StructureError("foil_from_solid needs a single solid column");
    FoilModel f;
    f.M_sigma = s.M_sigma;
    f.K_nu = s.K_nu;
    f.X_foil = s.M_sigma * s.chi;
    f.c = Vec::Ones(1);
    f.G_foil = s.G;
    return f;
}

/// R_str = X^T M_str^+ X, with M_str the conductivity matrix of the winding
/// region at the strand conductivity.
inline Mat winding_resistance(const SpMat& M_str, const Mat& X) {
    const Mat Y = fem::pseudo_solve(M_str, X);
    Mat R = X.transpose() * Y;
    return 0.5 * (R + R.transpose());
}

/// L = X^T K_nu^{-1} X.
inline Mat lumped_inductance(const SpMat& K_nu, const Mat& X) {
    if (X.rows() != K_nu.rows()) throw StructureError("lumped_inductance: shape mismatch");
    if (X.size() == 0 || X.norm() == 0.0) return Mat::Zero(X.cols(), X.cols());
    Eigen::SimplicialLDLT<SpMat> ldlt(K_nu);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
        throw NumericalError("lumped_inductance: K_nu is singular (check the pencil and Dirichlet data)");
    const Mat Y = ldlt.solve(X);
    Mat L = X.transpose() * Y;
    return 0.5 * (L + L.transpose());
}

// ---------------------------------------------------------------------------
// Import / export: a directory with Matrix Market files and `manifest.txt`
// of `key = value` lines. Keys: kind (stranded|solid|foil), M_sigma, K_nu,
// X (stranded winding columns, solid chi, foil X_foil), c (foil),
// G (solid G, foil G_foil; optional for solid), R (stranded R_str, optional).

namespace detail {
inline std::map<std::string, std::string> read_manifest(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw ParseError("cannot open manifest " + file.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto p = line.find('#'); p != std::string::npos) line.erase(p);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, first + 1);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ParseError("empty key", lineno, first + 1);
        if (kv.count(key)) throw ParseError("duplicate key '" + key + "'", lineno, first + 1);
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}
}  // namespace detail

inline ConductorModel import_conductor(const std::filesystem::path& dir_or_manifest) {
    const auto manifest =
        std::filesystem::is_directory(dir_or_manifest) ? dir_or_manifest / "manifest.txt" : dir_or_manifest;
    const auto dir = manifest.parent_path();
    const auto kv = detail::read_manifest(manifest);
    auto need = [&](const std::string& k) -> std::string {
        const auto it = kv.find(k);
        if (it == kv.end()) throw ParseError("manifest " + manifest.string() + " lacks key '" + k + "'");
        return it->second;
    };
    auto mat = [&](const std::string& k) { return mm::read_file(dir / need(k)); };
    const auto kind = need("kind");
    if (kind == "stranded") {
        StrandedModel m{mat("M_sigma"), mat("K_nu"), to_dense(mat("X")), Mat()};
        m.R_str = kv.count("R") ? to_dense(mat("R")) : Mat::Zero(m.X.cols(), m.X.cols());
        return m;
    }
    if (kind == "solid") {
        auto m = SolidModel::make(mat("M_sigma"), mat("K_nu"), to_dense(mat("X")));
        if (kv.count("G")) m.G = to_dense(mat("G"));
        return m;
    }
    if (kind == "foil") {
        FoilModel m{mat("M_sigma"), mat("K_nu"), to_dense(mat("X")), Vec(), to_dense(mat("G"))};
        const Mat c = to_dense(mat("c"));
        m.c = Eigen::Map<const Vec>(c.data(), c.size());
        return m;
    }
    throw ParseError("manifest " + manifest.string() + ": unknown kind '" + kind + "'");
}

inline void export_conductor(const ConductorModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream man(dir / "manifest.txt");
    auto put = [&](const std::string& key, const SpMat& a) {
        mm::write_file(dir / (key + ".mtx"), a);
        man << key << " = " << key << ".mtx\n";
    };
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, StrandedModel>) {
                man << "kind = stranded\n";
                put("M_sigma", m.M_sigma);
                put("K_nu", m.K_nu);
                put("X", to_sparse(m.X));
                put("R", to_sparse(m.R_str));
            } else if constexpr (std::is_same_v<T, SolidModel>) {
                man << "kind = solid\n";
                put("M_sigma", m.M_sigma);
                put("K_nu", m.K_nu);
                put("X", to_sparse(m.chi));
                put("G", to_sparse(m.G));
            } else {
                man << "kind = foil\n";
                put("M_sigma", m.M_sigma);
                put("K_nu", m.K_nu);
                put("X", to_sparse(m.X_foil));
                put("c", to_sparse(Mat(m.c)));
                put("G", to_sparse(m.G_foil));
            }
        },
        model);
}

inline const char* kind_name(const ConductorModel& m) {
    switch (m.index()) {
        case 0: return "stranded";
        case 1: return "solid";
        default: return "foil";
    }
}

inline Index port_count(const ConductorModel& m) {
    switch (m.index()) {
        case 0: return std::get<StrandedModel>(m).X.cols();
        case 1: return std::get<SolidModel>(m).chi.cols();
        default: return 1;
    }
}

inline EnergySystem conductor_system(const ConductorModel& m, const std::string& name) {
    return std::visit(
        [&](const auto& x) -> EnergySystem {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, StrandedModel>) return stranded_system(x, name);
            else if constexpr (std::is_same_v<T, SolidModel>) return solid_system(x, name);
            else return foil_system(x, name);
        },
        m);
}

}  // namespace ebfc
