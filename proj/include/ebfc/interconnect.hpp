#pragma once

// Power-preserving (F_skew) and dissipative (F_sym) interconnection of two
// energy-based systems through u = (F_skew - F_sym) y + u_tilde.

#include <numeric>
#include <string>
#include <vector>

#include "ebfc/energy_system.hpp"

namespace ebfc {

struct InterconnectionSpec {
    SpMat F_skew;  ///< (mA+mB) x (mA+mB), skew-symmetric
    SpMat F_sym;   ///< (mA+mB) x (mA+mB), symmetric positive semi-definite

    static InterconnectionSpec none(Index m) { return {zeros(m, m), zeros(m, m)}; }
};

/// State permutation between the concatenation [z_A; z_B] and the
/// class-interleaved order [z1A; z1B; z2A; z2B; z3A; z3B].
struct Permutation {
    std::vector<Index> new_to_old;

    std::vector<Index> old_to_new() const {
        std::vector<Index> inv(new_to_old.size());
        for (std::size_t k = 0; k < new_to_old.size(); ++k) inv[static_cast<std::size_t>(new_to_old[k])] = static_cast<Index>(k);
        return inv;
    }
    Permutation inverse() const { return {old_to_new()}; }

    /// out[k] = v[new_to_old[k]]
    Vec apply(const Vec& v) const {
        Vec out(v.size());
        for (std::size_t k = 0; k < new_to_old.size(); ++k) out(static_cast<Index>(k)) = v(new_to_old[k]);
        return out;
    }
    template <class T>
    std::vector<T> apply(const std::vector<T>& v) const {
        std::vector<T> out;
        out.reserve(v.size());
        for (auto i : new_to_old) out.push_back(v[static_cast<std::size_t>(i)]);
        return out;
    }
};

inline Permutation permute_to_partition_order(const Partition& a, const Partition& b) {
    Permutation p;
    const Index offB = a.n();
    auto push_range = [&](Index start, Index count) {
        for (Index i = 0; i < count; ++i) p.new_to_old.push_back(start + i);
    };
    push_range(0, a.n1);
    push_range(offB, b.n1);
    push_range(a.n1, a.n2);
    push_range(offB + b.n1, b.n2);
    push_range(a.n1 + a.n2, a.n3);
    push_range(offB + b.n1 + b.n2, b.n3);
    return p;
}

namespace detail {
inline void check_spec(const InterconnectionSpec& spec, Index m, const Tolerances& tol) {
    auto shape = [&](const char* name, const SpMat& F) {
        if (F.rows() != m || F.cols() != m)
            throw StructureError(std::string(name) + " has shape " + std::to_string(F.rows()) + "x" +
                                 std::to_string(F.cols()) + ", expected " + std::to_string(m) + "x" +
                                 std::to_string(m));
    };
    shape("F_skew", spec.F_skew);
    shape("F_sym", spec.F_sym);
    const double skew = max_abs(spec.F_skew + SpMat(spec.F_skew.transpose()));
    if (skew > tol.skew * frobenius(spec.F_skew))
        throw StructureError("F_skew is not skew-symmetric (defect " + std::to_string(skew) + ")");
    const double sym = max_abs(spec.F_sym - SpMat(spec.F_sym.transpose()));
    if (sym > tol.skew * frobenius(spec.F_sym))
        throw StructureError("F_sym is not symmetric (defect " + std::to_string(sym) + ")");
    const auto psd = check_psd(spec.F_sym, tol.psd);
    if (!psd.psd)
        throw StructureError("F_sym is not positive semi-definite (min eigenvalue " +
                             std::to_string(psd.min_eigenvalue) + ")");
}
}  // namespace detail

/// Coupled system of two subsystems. States are ordered by class,
/// [z1A; z1B; z2A; z2B; z3A; z3B]; ports are [ports_A; ports_B] and the
/// returned system's input is u_tilde.
inline EnergySystem interconnect(const EnergySystem& a, const EnergySystem& b, const InterconnectionSpec& spec,
                                 const Tolerances& tol = {}) {
    for (const auto* s : {&a, &b}) {
        const auto rep = validate(*s, tol);
        if (!rep.ok) throw StructureError("subsystem fails validation: " + rep.summary());
    }
    const Index m = a.m() + b.m();
    detail::check_spec(spec, m, tol);

    const auto perm = permute_to_partition_order(a.partition, b.partition);
    const auto o2n = perm.old_to_new();

    EnergySystem out;
    out.partition = {a.partition.n1 + b.partition.n1, a.partition.n2 + b.partition.n2,
                     a.partition.n3 + b.partition.n3, m};
    out.E = block_diag({a.E, b.E});
    out.M1 = block_diag({a.M1, b.M1});
    out.M2 = block_diag({a.M2, b.M2});
    out.S = block_diag({a.S, b.S});
    const SpMat J = permute_symmetric(block_diag({a.J, b.J}), o2n);
    const SpMat R = permute_symmetric(block_diag({a.R, b.R}), o2n);
    out.B = permute_rows(block_diag({a.B, b.B}), o2n);
    const SpMat Bt = out.B.transpose();
    out.J = J + SpMat(out.B * spec.F_skew * Bt);
    out.R = R + SpMat(out.B * spec.F_sym * Bt);
    out.J.prune(0.0);
    out.R.prune(0.0);

    std::vector<std::string> names;
    for (Index i = 0; i < a.n(); ++i) names.push_back(a.state_name(i));
    for (Index i = 0; i < b.n(); ++i) names.push_back(b.state_name(i));
    out.state_names = perm.apply(names);
    for (Index i = 0; i < a.m(); ++i) out.port_names.push_back(a.port_name(i));
    for (Index i = 0; i < b.m(); ++i) out.port_names.push_back(b.port_name(i));
    return out;
}

inline EnergySystem direct_sum(const EnergySystem& a, const EnergySystem& b) {
    return interconnect(a, b, InterconnectionSpec::none(a.m() + b.m()));
}

/// Left fold of direct sums followed by one interconnection acting on all
/// ports at once. `spec` is indexed by the concatenated port order of
/// `systems`.
inline EnergySystem interconnect_all(const std::vector<EnergySystem>& systems, const InterconnectionSpec& spec,
                                     const Tolerances& tol = {}) {
    if (systems.empty()) throw StructureError("interconnect_all: no systems");
    if (systems.size() == 1) {
        // Self-interconnection of a single system: closed loop on its own ports.
        const auto& s = systems.front();
        detail::check_spec(spec, s.m(), tol);
        EnergySystem out = s;
        const SpMat Bt = s.B.transpose();
        out.J = s.J + SpMat(s.B * spec.F_skew * Bt);
        out.R = s.R + SpMat(s.B * spec.F_sym * Bt);
        return out;
    }
    EnergySystem acc = systems.front();
    for (std::size_t k = 1; k + 1 < systems.size(); ++k) acc = direct_sum(acc, systems[k]);
    return interconnect(acc, systems.back(), spec, tol);
}

}  // namespace ebfc
