#pragma once

// Fixed-step time integration of energy-based systems and discrete energy
// bookkeeping.
//
// Two solution routes exist on purpose: the midpoint step works on the
// energy structure directly (J, R, B, M1, E, S), while every other method,
// trapezoidal included, works on the rearranged linear DAE
// E_dae x' = A_dae x + B_dae u. For LTI systems the two coincide.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "ebfc/energy_system.hpp"
#include "ebfc/waveform.hpp"

namespace ebfc {

// ---------------------------------------------------------------------------
// Methods and tableaux

enum class MethodTag { implicit_euler, midpoint, trapezoidal, bdf2, gauss4, radau5 };

struct ButcherTableau {
    Mat a;  ///< stage matrix
    Vec b;  ///< weights
    Vec c;  ///< abscissae
    int order = 0;

    /// Weights sum to one, abscissae lie in [0, 1] and equal the row sums.
    bool consistent(double tol = 1e-14) const {
        if (std::abs(b.sum() - 1.0) > tol) return false;
        for (Index i = 0; i < c.size(); ++i) {
            if (c(i) < -tol || c(i) > 1.0 + tol) return false;
            if (std::abs(a.row(i).sum() - c(i)) > tol) return false;
        }
        return true;
    }
};

inline ButcherTableau gauss4_tableau() {
    const double s3 = std::sqrt(3.0);
    ButcherTableau t;
    t.a.resize(2, 2);
    t.a << 0.25, 0.25 - s3 / 6.0, 0.25 + s3 / 6.0, 0.25;
    t.b = Vec::Constant(2, 0.5);
    t.c.resize(2);
    t.c << 0.5 - s3 / 6.0, 0.5 + s3 / 6.0;
    t.order = 4;
    return t;
}

inline ButcherTableau radau5_tableau() {
    const double s6 = std::sqrt(6.0);
    ButcherTableau t;
    t.a.resize(3, 3);
    t.a << (88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0,
        (296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0,
        (16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0;
    t.b = t.a.row(2).transpose();
    t.c.resize(3);
    t.c << (4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0;
    t.order = 5;
    return t;
}

struct Method {
    MethodTag tag = MethodTag::trapezoidal;
    std::optional<ButcherTableau> tableau;  ///< set for gauss4 and radau5

    static Method make(MethodTag tag) {
        Method m{tag, std::nullopt};
        if (tag == MethodTag::gauss4) m.tableau = gauss4_tableau();
        if (tag == MethodTag::radau5) m.tableau = radau5_tableau();
        return m;
    }
};

inline std::string to_string(MethodTag tag) {
    switch (tag) {
        case MethodTag::implicit_euler: return "implicit_euler";
        case MethodTag::midpoint: return "midpoint";
        case MethodTag::trapezoidal: return "trapezoidal";
        case MethodTag::bdf2: return "bdf2";
        case MethodTag::gauss4: return "gauss4";
        case MethodTag::radau5: return "radau5";
    }
    return "?";
}

/// Accepts the canonical tags plus the aliases `euler`, `trap`, `gauss`, `radau`.
inline std::optional<MethodTag> parse_method(const std::string& s) {
    static const std::map<std::string, MethodTag> tags{
        {"implicit_euler", MethodTag::implicit_euler}, {"euler", MethodTag::implicit_euler},
        {"midpoint", MethodTag::midpoint},             {"trapezoidal", MethodTag::trapezoidal},
        {"trap", MethodTag::trapezoidal},              {"bdf2", MethodTag::bdf2},
        {"gauss4", MethodTag::gauss4},                 {"gauss", MethodTag::gauss4},
        {"radau5", MethodTag::radau5},                 {"radau", MethodTag::radau5}};
    const auto it = tags.find(s);
    if (it == tags.end()) return std::nullopt;
    return it->second;
}

// ---------------------------------------------------------------------------
// Linear DAE form

struct LinearDae {
    SpMat E_dae;  ///< n x n
    SpMat A_dae;  ///< n x n
    SpMat B_dae;  ///< n x m
};

/// Rearranges the energy structure into E_dae x' = A_dae x + B_dae u with
/// x = [z1; z2; z3]. With K = J - R:
///   row 1:  K11 z1'            = M1 z1 - K12 S z2 - K13 z3 - B1 u
///   row 2:  E z2' - K21 z1'    = K22 S z2 + K23 z3 + B2 u
///   row 3:  -K31 z1'           = K32 S z2 + K33 z3 + B3 u
/// so E_dae x' - A_dae x - B_dae u equals dae_residual with row block 1 negated.
inline LinearDae to_linear_dae(const EnergySystem& sys) {
    check_dimensions(sys);
    const auto& p = sys.partition;
    const SpMat K = sys.J - sys.R;
    auto blk = [&](int i, int j) {
        const Index off[3] = {0, p.n1, p.n1 + p.n2};
        const Index len[3] = {p.n1, p.n2, p.n3};
        return sub_block(K, off[i], len[i], off[j], len[j]);
    };
    const std::vector<Index> sizes{p.n1, p.n2, p.n3};

    BlockBuilder e(sizes, sizes);
    e.set(0, 0, blk(0, 0));
    e.set(1, 0, blk(1, 0), -1.0);
    e.set(1, 1, sys.E);
    e.set(2, 0, blk(2, 0), -1.0);

    BlockBuilder a(sizes, sizes);
    a.set(0, 0, sys.M1);
    a.set(0, 1, SpMat(blk(0, 1) * sys.S), -1.0);
    a.set(0, 2, blk(0, 2), -1.0);
    a.set(1, 1, SpMat(blk(1, 1) * sys.S));
    a.set(1, 2, blk(1, 2));
    a.set(2, 1, SpMat(blk(2, 1) * sys.S));
    a.set(2, 2, blk(2, 2));

    BlockBuilder b(sizes, {p.m});
    b.set(0, 0, sub_block(sys.B, 0, p.n1, 0, p.m), -1.0);
    b.set(1, 0, sub_block(sys.B, p.n1, p.n2, 0, p.m));
    b.set(2, 0, sub_block(sys.B, p.n1 + p.n2, p.n3, 0, p.m));

    LinearDae dae{e.build(), a.build(), b.build()};
    dae.E_dae.prune(0.0);
    dae.A_dae.prune(0.0);
    dae.B_dae.prune(0.0);
    return dae;
}

// ---------------------------------------------------------------------------
// Linear solver with one factorization and residual refinement

/// Sparse LU of a fixed matrix. Solutions are refined with residuals
/// accumulated in long double, which keeps the per-step energy round-off
/// near machine precision for ill-scaled field blocks.
class StageSolver {
public:
    StageSolver() = default;

    void factorize(const SpMat& a, long step_for_errors = -1) {
        a_ = a;
        a_.makeCompressed();
        lu_ = std::make_unique<Eigen::SparseLU<SpMat>>();
        lu_->analyzePattern(a_);
        lu_->factorize(a_);
        if (lu_->info() != Eigen::Success)
            throw NumericalError("singular stage matrix: " + lu_->lastErrorMessage() +
                                     " (check pencil regularity and model consistency)",
                                 step_for_errors);
        scale_ = 0.0;
        for (Index j = 0; j < a_.outerSize(); ++j)
            for (SpMat::InnerIterator it(a_, j); it; ++it) scale_ = std::max(scale_, std::abs(it.value()));
    }

    Vec solve(const Vec& rhs, long step_for_errors = -1) const {
        Vec x = lu_->solve(rhs);
        if (!x.allFinite()) throw NumericalError("stage solve produced non-finite values", step_for_errors);
        for (int pass = 0; pass < 2; ++pass) {
            const Vec r = residual(x, rhs);
            if (r.lpNorm<Eigen::Infinity>() == 0.0) break;
            x += lu_->solve(r);
        }
        const double res = residual(x, rhs).lpNorm<Eigen::Infinity>();
        const double ref = scale_ * x.lpNorm<Eigen::Infinity>() + rhs.lpNorm<Eigen::Infinity>();
        if (ref > 0.0 && res > 1e-8 * ref)
            throw NumericalError("stage matrix numerically singular (relative residual " +
                                     std::to_string(res / ref) + ")",
                                 step_for_errors);
        return x;
    }

    bool ready() const { return static_cast<bool>(lu_); }

private:
    Vec residual(const Vec& x, const Vec& rhs) const {
        std::vector<long double> acc(static_cast<std::size_t>(rhs.size()));
        for (Index i = 0; i < rhs.size(); ++i) acc[static_cast<std::size_t>(i)] = rhs(i);
        for (Index j = 0; j < a_.outerSize(); ++j)
            for (SpMat::InnerIterator it(a_, j); it; ++it)
                acc[static_cast<std::size_t>(it.row())] -=
                    static_cast<long double>(it.value()) * static_cast<long double>(x(j));
        Vec r(rhs.size());
        for (Index i = 0; i < rhs.size(); ++i) r(i) = static_cast<double>(acc[static_cast<std::size_t>(i)]);
        return r;
    }

    SpMat a_;
    std::unique_ptr<Eigen::SparseLU<SpMat>> lu_;
    double scale_ = 0.0;
};

// ---------------------------------------------------------------------------
// Midpoint step on the energy structure

struct MidpointResult {
    Vec z_next;
    Vec y_mid;
};

/// Midpoint stepper with a cached stage factorization for a fixed tau.
class MidpointStepper {
public:
    MidpointStepper(const EnergySystem& sys, double tau) : sys_(&sys), tau_(tau) {
        if (!(tau > 0.0)) throw StructureError("time step must be positive");
        check_dimensions(sys);
        const auto& p = sys.partition;
        K_ = sys.J - sys.R;
        // Unknown: delta = z^{k+1} - z^k. With w_mid = [delta1/tau; S z2mid; z3mid]:
        //   [tau M1 z1mid; E delta2; 0] = K [delta1; tau S z2mid; tau z3mid] + tau B u.
        const SpMat D = block_diag({SpMat(0.5 * tau * sys.M1), sys.E, zeros(p.n3, p.n3)});
        const SpMat W = block_diag({identity(p.n1), SpMat(0.5 * tau * sys.S), SpMat(0.5 * tau * identity(p.n3))});
        const SpMat lhs = D - SpMat(K_ * W);
        solver_.factorize(lhs);
    }

    MidpointResult step(const Vec& z, const Vec& u_mid, long step_index = -1) const {
        const auto& sys = *sys_;
        const auto& p = sys.partition;
        detail::expect_length("state", z.size(), p.n());
        detail::expect_length("input", u_mid.size(), p.m);
        Vec v = Vec::Zero(p.n());
        v.segment(p.n1, p.n2) = sys.S * z.segment(p.n1, p.n2);
        v.tail(p.n3) = z.tail(p.n3);
        Vec rhs = tau_ * (K_ * v) + tau_ * (sys.B * u_mid);
        rhs.head(p.n1) -= tau_ * (sys.M1 * z.head(p.n1));
        const Vec delta = solver_.solve(rhs, step_index);
        MidpointResult out;
        out.z_next = z + delta;
        const Vec zmid = z + 0.5 * delta;
        out.y_mid = output(sys, delta.head(p.n1) / tau_, zmid);
        return out;
    }

private:
    const EnergySystem* sys_;
    double tau_;
    SpMat K_;
    StageSolver solver_;
};

inline MidpointResult step_midpoint(const EnergySystem& sys, const Vec& z, const Vec& u_mid, double tau) {
    return MidpointStepper(sys, tau).step(z, u_mid);
}

// ---------------------------------------------------------------------------
// Steppers on the linear DAE

/// One-step and multistage methods on E x' = A x + B u with fixed tau.
class DaeStepper {
public:
    DaeStepper(const LinearDae& dae, Method method, double tau) : dae_(&dae), method_(std::move(method)), tau_(tau) {
        if (!(tau > 0.0)) throw StructureError("time step must be positive");
        const SpMat& E = dae.E_dae;
        const SpMat& A = dae.A_dae;
        const Index n = E.rows();
        switch (method_.tag) {
            case MethodTag::implicit_euler:
                solver_.factorize(SpMat(E - tau * A));
                break;
            case MethodTag::trapezoidal:
            case MethodTag::midpoint:
                solver_.factorize(SpMat(E - 0.5 * tau * A));
                break;
            case MethodTag::bdf2:
                solver_.factorize(SpMat(1.5 * E - tau * A));
                startup_.factorize(SpMat(E - 0.5 * tau * A));
                break;
            case MethodTag::gauss4:
            case MethodTag::radau5: {
                if (!method_.tableau) method_ = Method::make(method_.tag);
                const auto& tab = *method_.tableau;
                const Index s = tab.b.size();
                // Stage derivatives K_i:  E K_i - tau sum_j a_ij A K_j = A x + B u(t + c_i tau)
                std::vector<Triplet> t;
                for (Index i = 0; i < s; ++i)
                    for (Index j = 0; j < s; ++j) {
                        const double aij = tab.a(i, j);
                        for (Index col = 0; col < n; ++col) {
                            if (i == j)
                                for (SpMat::InnerIterator it(E, col); it; ++it)
                                    t.emplace_back(i * n + it.row(), j * n + col, it.value());
                            if (aij != 0.0)
                                for (SpMat::InnerIterator it(A, col); it; ++it)
                                    t.emplace_back(i * n + it.row(), j * n + col, -tau * aij * it.value());
                        }
                    }
                SpMat big(s * n, s * n);
                big.setFromTriplets(t.begin(), t.end());
                solver_.factorize(big);
                break;
            }
        }
    }

    /// Advances x from t to t + tau. `x_prev` is used by bdf2 only (state at
    /// t - tau); pass std::nullopt on the first step to take the trapezoidal
    /// startup step.
    Vec step(const Vec& x, const InputSignal& u, double t, const std::optional<Vec>& x_prev = std::nullopt,
             long step_index = -1) const {
        const SpMat& E = dae_->E_dae;
        const SpMat& A = dae_->A_dae;
        const SpMat& B = dae_->B_dae;
        const double tau = tau_;
        switch (method_.tag) {
            case MethodTag::implicit_euler: {
                // (E - tau A) delta = tau (A x + B u(t + tau))
                const Vec rhs = tau * (A * x + B * u(t + tau));
                return x + solver_.solve(rhs, step_index);
            }
            case MethodTag::trapezoidal:
            case MethodTag::midpoint: {
                const Vec ubar = method_.tag == MethodTag::midpoint ? Vec(u(t + 0.5 * tau))
                                                                    : Vec(0.5 * (u(t) + u(t + tau)));
                const Vec rhs = tau * (A * x + B * ubar);
                return x + solver_.solve(rhs, step_index);
            }
            case MethodTag::bdf2: {
                if (!x_prev) {
                    const Vec rhs = tau * (A * x + B * (0.5 * (u(t) + u(t + tau))));
                    return x + startup_.solve(rhs, step_index);
                }
                // 3/2 E (x+ - x) - 1/2 E (x - x-) = tau (A x+ + B u+)
                //   => (3/2 E - tau A) delta = tau (A x + B u+) + 1/2 E (x - x-)
                const Vec rhs = tau * (A * x + B * u(t + tau)) + 0.5 * (E * (x - *x_prev));
                return x + solver_.solve(rhs, step_index);
            }
            case MethodTag::gauss4:
            case MethodTag::radau5: {
                const auto& tab = *method_.tableau;
                const Index s = tab.b.size();
                const Index n = x.size();
                const Vec Ax = A * x;
                Vec rhs(s * n);
                for (Index i = 0; i < s; ++i) rhs.segment(i * n, n) = Ax + B * u(t + tab.c(i) * tau);
                const Vec k = solver_.solve(rhs, step_index);
                Vec inc = Vec::Zero(n);
                for (Index i = 0; i < s; ++i) inc += tab.b(i) * k.segment(i * n, n);
                return x + tau * inc;
            }
        }
        return x;
    }

    const Method& method() const { return method_; }

private:
    const LinearDae* dae_;
    Method method_;
    double tau_;
    StageSolver solver_;
    StageSolver startup_;
};

inline Vec step_irk(const LinearDae& dae, const Method& method, const Vec& x, const InputSignal& u, double t,
                    double tau) {
    return DaeStepper(dae, method, tau).step(x, u, t);
}

// ---------------------------------------------------------------------------
// Consistent initialization

struct InitResult {
    Vec z;
    Index algebraic_rows = 0;          ///< number of independent algebraic constraints
    Index undetermined_components = 0;  ///< free components not fixed by the constraints (kept at their given value)
    double constraint_residual = 0.0;
};

/// Completes a partial initial state so the algebraic rows of the linear DAE
/// hold at t0. Components with fixed[i] = true keep their given value;
/// the others are solved for. By default z1 and z2 are fixed and z3 is free.
/// Free components that the algebraic rows do not determine (for example a
/// voltage-source current in an index-2 loop) are set by a minimum-norm
/// correction from their given values.
inline InitResult consistent_init(const EnergySystem& sys, const Vec& z_given, const Vec& u0,
                                  std::vector<bool> fixed = {}, double tol = 1e-10) {
    const auto& p = sys.partition;
    detail::expect_length("state", z_given.size(), p.n());
    detail::expect_length("input", u0.size(), p.m);
    if (fixed.empty()) {
        fixed.assign(static_cast<std::size_t>(p.n()), false);
        for (Index i = 0; i < p.n1 + p.n2; ++i) fixed[static_cast<std::size_t>(i)] = true;
    }
    if (static_cast<Index>(fixed.size()) != p.n()) throw StructureError("fixed mask has wrong length");

    const LinearDae dae = to_linear_dae(sys);
    const SpMat& E = dae.E_dae;
    const Index n = p.n();

    // Left null space of E_dae: structurally zero rows first, then a dense
    // kernel computation on the remaining rows and their nonzero columns.
    std::vector<char> row_used(static_cast<std::size_t>(n), 0), col_used(static_cast<std::size_t>(n), 0);
    for (Index j = 0; j < E.outerSize(); ++j)
        for (SpMat::InnerIterator it(E, j); it; ++it)
            if (it.value() != 0.0) {
                row_used[static_cast<std::size_t>(it.row())] = 1;
                col_used[static_cast<std::size_t>(j)] = 1;
            }
    std::vector<Index> zero_rows, rows, cols;
    for (Index i = 0; i < n; ++i) {
        (row_used[static_cast<std::size_t>(i)] ? rows : zero_rows).push_back(i);
        if (col_used[static_cast<std::size_t>(i)]) cols.push_back(i);
    }
    Mat N_dense;  // columns = left null vectors restricted to `rows`
    if (!rows.empty()) {
        Mat Esub(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
        const Mat Ed = to_dense(E);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < cols.size(); ++j)
                Esub(static_cast<Index>(i), static_cast<Index>(j)) = Ed(rows[i], cols[j]);
        Eigen::FullPivLU<Mat> lu(Esub.transpose());
        lu.setThreshold(1e-12);
        if (lu.dimensionOfKernel() > 0) N_dense = lu.kernel();
        if (N_dense.cols() == 1 && N_dense.norm() == 0.0) N_dense.resize(static_cast<Index>(rows.size()), 0);
    }
    const Index n_constraints = static_cast<Index>(zero_rows.size()) + N_dense.cols();

    InitResult res;
    res.z = z_given;
    res.algebraic_rows = n_constraints;
    if (n_constraints == 0) return res;

    // Constraint matrix C = N^T A, right-hand side d = -N^T B u0.
    const Mat A = to_dense(dae.A_dae);
    const Vec Bu = dae.B_dae * u0;
    Mat C(n_constraints, n);
    Vec d(n_constraints);
    for (std::size_t k = 0; k < zero_rows.size(); ++k) {
        C.row(static_cast<Index>(k)) = A.row(zero_rows[k]);
        d(static_cast<Index>(k)) = -Bu(zero_rows[k]);
    }
    for (Index q = 0; q < N_dense.cols(); ++q) {
        Vec row = Vec::Zero(n);
        double rhs = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            row += N_dense(static_cast<Index>(i), q) * A.row(rows[i]).transpose();
            rhs -= N_dense(static_cast<Index>(i), q) * Bu(rows[i]);
        }
        C.row(static_cast<Index>(zero_rows.size()) + q) = row.transpose();
        d(static_cast<Index>(zero_rows.size()) + q) = rhs;
    }

    std::vector<Index> free_idx;
    for (Index i = 0; i < n; ++i)
        if (!fixed[static_cast<std::size_t>(i)]) free_idx.push_back(i);
    const Vec r0 = d - C * z_given;
    const double scale = C.cwiseAbs().maxCoeff() * std::max(1.0, z_given.lpNorm<Eigen::Infinity>()) +
                         d.lpNorm<Eigen::Infinity>();

    if (!free_idx.empty()) {
        Mat Cf(n_constraints, static_cast<Index>(free_idx.size()));
        for (std::size_t j = 0; j < free_idx.size(); ++j) Cf.col(static_cast<Index>(j)) = C.col(free_idx[j]);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(Cf);
        cod.setThreshold(1e-12);
        const Vec dz = cod.solve(r0);
        for (std::size_t j = 0; j < free_idx.size(); ++j) res.z(free_idx[j]) += dz(static_cast<Index>(j));
        res.undetermined_components = static_cast<Index>(free_idx.size()) - cod.rank();
    }
    const Vec r = d - C * res.z;
    res.constraint_residual = r.lpNorm<Eigen::Infinity>();
    if (res.constraint_residual > tol * std::max(scale, 1e-300)) {
        Index worst = 0;
        r.cwiseAbs().maxCoeff(&worst);
        const Index row = worst < static_cast<Index>(zero_rows.size()) ? zero_rows[static_cast<std::size_t>(worst)] : -1;
        std::string where = "a combined algebraic constraint";
        if (row >= 0) {
            const char* block = row < p.n1 ? "z1" : (row < p.n1 + p.n2 ? "z2" : "z3");
            where = "row " + std::to_string(row) + " (" + block + " block)";
        }
        throw NumericalError("inconsistent initial value: algebraic " + where + " violated by " +
                             std::to_string(res.constraint_residual));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Simulation

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> outputs;   ///< outputs[k]: midpoint output of the step ending at t_k; outputs[0] uses the first step
    std::vector<Vec> inputs;    ///< inputs[k]: input sample used for the step ending at t_k (inputs[0] = u(t0))
    std::vector<double> hamiltonians;
    std::vector<double> dissipated_cum;
    std::vector<double> supplied_cum;
    MethodTag method = MethodTag::trapezoidal;
    double tau = 0.0;

    std::size_t size() const { return times.size(); }
};

/// Input sample that pairs with the midpoint state of step [t, t + tau].
/// The midpoint rule samples u at t + tau/2; every other method uses the
/// trapezoidal average, which is the input the trapezoidal rule actually sees.
inline Vec midpoint_input(MethodTag tag, const InputSignal& u, double t, double tau) {
    if (tag == MethodTag::midpoint) return u(t + 0.5 * tau);
    return 0.5 * (u(t) + u(t + tau));
}

struct StepEnergy {
    double dH = 0.0;
    double supply = 0.0;       ///< tau <y_mid, u_mid>
    double dissipation = 0.0;  ///< tau w_mid^T R w_mid
    Vec y_mid;
};

inline StepEnergy step_energy(const EnergySystem& sys, const Vec& z0, const Vec& z1, const Vec& u_mid, double tau) {
    const auto& p = sys.partition;
    const Vec zmid = 0.5 * (z0 + z1);
    const Vec zdot1 = (z1.head(p.n1) - z0.head(p.n1)) / tau;
    const auto pt = power_terms(sys, zdot1, zmid, u_mid);
    StepEnergy e;
    e.dH = hamiltonian(sys, z1) - hamiltonian(sys, z0);
    e.supply = tau * pt.supply;
    e.dissipation = tau * pt.dissipation;
    e.y_mid = output(sys, zdot1, zmid);
    return e;
}

inline Trajectory simulate(const EnergySystem& sys, const Vec& z0, const InputSignal& u, double tau, double t_end,
                           const Method& method, double t0 = 0.0) {
    check_dimensions(sys);
    detail::expect_length("initial state", z0.size(), sys.n());
    if (u.size() != sys.m()) throw StructureError("input signal has " + std::to_string(u.size()) +
                                                  " channels, expected " + std::to_string(sys.m()));
    if (!(tau > 0.0) || !(t_end > t0)) throw StructureError("need tau > 0 and t_end > t0");
    const double ratio = (t_end - t0) / tau;
    const auto steps = static_cast<long>(std::llround(ratio));
    if (std::abs(ratio - static_cast<double>(steps)) > 1e-6 * std::max(1.0, ratio))
        throw StructureError("tau does not divide the simulation interval");

    Trajectory tr;
    tr.method = method.tag;
    tr.tau = tau;
    tr.times.reserve(static_cast<std::size_t>(steps + 1));
    tr.times.push_back(t0);
    tr.states.push_back(z0);
    tr.inputs.push_back(u(t0));
    tr.hamiltonians.push_back(hamiltonian(sys, z0));
    tr.dissipated_cum.push_back(0.0);
    tr.supplied_cum.push_back(0.0);

    std::optional<MidpointStepper> mp;
    std::optional<LinearDae> dae;
    std::optional<DaeStepper> ds;
    if (method.tag == MethodTag::midpoint) {
        mp.emplace(sys, tau);
    } else {
        dae.emplace(to_linear_dae(sys));
        ds.emplace(*dae, method, tau);
    }

    double D = 0.0, Ein = 0.0;
    for (long k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * tau;
        const Vec& z = tr.states.back();
        Vec zn;
        if (mp) {
            zn = mp->step(z, u(t + 0.5 * tau), k).z_next;
        } else {
            std::optional<Vec> prev;
            if (method.tag == MethodTag::bdf2 && k > 0) prev = tr.states[static_cast<std::size_t>(k - 1)];
            zn = ds->step(z, u, t, prev, k);
        }
        const Vec umid = midpoint_input(method.tag, u, t, tau);
        const auto e = step_energy(sys, z, zn, umid, tau);
        D += e.dissipation;
        Ein += e.supply;
        tr.times.push_back(t0 + static_cast<double>(k + 1) * tau);
        tr.states.push_back(std::move(zn));
        tr.outputs.push_back(e.y_mid);
        tr.inputs.push_back(umid);
        tr.hamiltonians.push_back(hamiltonian(sys, tr.states.back()));
        tr.dissipated_cum.push_back(D);
        tr.supplied_cum.push_back(Ein);
    }
    // outputs[0] pairs with the first step
    tr.outputs.insert(tr.outputs.begin(), tr.outputs.empty() ? Vec(Vec::Zero(sys.m())) : tr.outputs.front());
    return tr;
}

// ---------------------------------------------------------------------------
// Energy audit

struct AuditRow {
    double dH = 0.0;
    double supply = 0.0;
    double dissipation = 0.0;
    double defect = 0.0;  ///< dH - supply + dissipation
    double excess = 0.0;  ///< dH - supply (must be <= tol for the midpoint rule)
};

struct EnergyAudit {
    std::vector<AuditRow> rows;
    double tol = 0.0;
    double max_abs_defect = 0.0;
    double max_excess = -std::numeric_limits<double>::infinity();
    bool dissipation_inequality_holds = true;  ///< every step has excess <= tol
    bool balance_holds = true;                 ///< every step has |defect| <= tol
};

/// Recomputes the per-step balance from stored states and input samples.
/// tol = max(rel_tol * H_scale, abs_tol).
inline EnergyAudit energy_audit(const EnergySystem& sys, const Trajectory& tr, double rel_tol = 1e-10,
                                double abs_tol = 0.0) {
    EnergyAudit a;
    double hscale = 0.0;
    for (double h : tr.hamiltonians) hscale = std::max(hscale, std::abs(h));
    for (double e : tr.supplied_cum) hscale = std::max(hscale, std::abs(e));
    a.tol = std::max(rel_tol * hscale, abs_tol);
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
        const auto e = step_energy(sys, tr.states[k], tr.states[k + 1], tr.inputs[k + 1], tr.tau);
        AuditRow r{e.dH, e.supply, e.dissipation, e.dH - e.supply + e.dissipation, e.dH - e.supply};
        a.max_abs_defect = std::max(a.max_abs_defect, std::abs(r.defect));
        a.max_excess = std::max(a.max_excess, r.excess);
        if (r.excess > a.tol) a.dissipation_inequality_holds = false;
        if (std::abs(r.defect) > a.tol) a.balance_holds = false;
        a.rows.push_back(r);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Error measures

struct ErrorMeasures {
    double eps_z = 0.0;
    double eps_H = 0.0;
};

/// eps_z = max_k || z_ref(t_k) - z_k ||_inf over the listed components;
/// eps_H = |H_f - H_0| / H_0.
template <class Reference>
ErrorMeasures error_measures(const Trajectory& tr, const Reference& reference, const std::vector<Index>& components) {
    if (tr.size() == 0) throw StructureError("empty trajectory");
    const double H0 = tr.hamiltonians.front();
    if (H0 == 0.0) throw NumericalError("eps_H undefined for H_0 = 0");
    ErrorMeasures e;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        const Vec ref = reference(tr.times[k]);
        if (ref.size() != static_cast<Index>(components.size()))
            throw StructureError("reference returns " + std::to_string(ref.size()) + " values for " +
                                 std::to_string(components.size()) + " components");
        for (std::size_t c = 0; c < components.size(); ++c)
            e.eps_z = std::max(e.eps_z, std::abs(ref(static_cast<Index>(c)) - tr.states[k](components[c])));
    }
    e.eps_H = std::abs(tr.hamiltonians.back() - H0) / std::abs(H0);
    return e;
}

// ---------------------------------------------------------------------------
// CSV export

/// Header `t,H,D_cum,E_in,<state labels...>,<output labels...>`; values with
/// 17 significant digits. `state_columns` selects states (all when empty).
inline void write_csv(std::ostream& os, const EnergySystem& sys, const Trajectory& tr,
                      std::vector<Index> state_columns = {}, bool include_outputs = true) {
    if (state_columns.empty())
        for (Index i = 0; i < sys.n(); ++i) state_columns.push_back(i);
    os << "t,H,D_cum,E_in";
    for (auto i : state_columns) os << ',' << sys.state_name(i);
    if (include_outputs)
        for (Index i = 0; i < sys.m(); ++i) os << ',' << "y:" << sys.port_name(i);
    os << '\n';
    os << std::setprecision(17);
    for (std::size_t k = 0; k < tr.size(); ++k) {
        os << tr.times[k] << ',' << tr.hamiltonians[k] << ',' << tr.dissipated_cum[k] << ',' << tr.supplied_cum[k];
        for (auto i : state_columns) os << ',' << tr.states[k](i);
        if (include_outputs)
            for (Index i = 0; i < sys.m(); ++i) os << ',' << tr.outputs[k](i);
        os << '\n';
    }
}

}  // namespace ebfc
