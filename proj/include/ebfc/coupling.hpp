#pragma once

// Field-circuit coupling. Conductor ports are wired to circuit input slots
// by a skew-symmetric routing matrix:
//   circuit slot <- conductor output   (+1)
//   conductor input <- -circuit output (-1)
// For a stranded or foil port the circuit slot is a current in i and the
// conductor receives the branch voltage; for a solid port the slot is a
// voltage in v and the conductor receives the branch current.
//
// Systems are folded as [conductors in binding order..., circuit], so the
// coupled state is [all field a; phi; j_L; conductor z3 blocks; j_V] and the
// coupled input keeps every port: [conductor ports...; circuit ports].

#include <map>
#include <string>
#include <vector>

#include "ebfc/conductors.hpp"
#include "ebfc/integrators.hpp"
#include "ebfc/interconnect.hpp"
#include "ebfc/mna.hpp"

namespace ebfc {

struct PortBinding {
    struct Entry {
        std::string name;         ///< field port name
        Index circuit_input = 0;  ///< slot in the circuit's u = [i; v]
        Index conductor = 0;      ///< index into the conductor list
        Index conductor_port = 0;
        FieldKind kind = FieldKind::stranded;
    };
    std::vector<Entry> entries;
};

/// Binding for a parsed circuit and conductor systems keyed by model name.
/// `order` lists the model names in the order the conductors are passed to couple().
inline PortBinding bind_ports(const IncidenceSet& inc, const std::vector<std::string>& order) {
    PortBinding b;
    for (const auto& fp : inc.field_ports) {
        const auto it = std::find(order.begin(), order.end(), fp.model);
        if (it == order.end()) throw StructureError("field port '" + fp.name + "' references unknown model '" + fp.model + "'");
        b.entries.push_back({fp.name, fp.input_index, static_cast<Index>(it - order.begin()), fp.column, fp.kind});
    }
    return b;
}

/// Index of every subsystem state within the coupled state vector.
struct CouplingLayout {
    std::vector<std::vector<Index>> conductor_states;  ///< per conductor, in its own state order
    std::vector<Index> circuit_states;
    std::vector<Index> conductor_port_offset;  ///< first coupled input index of each conductor
    Index circuit_port_offset = 0;
};

inline CouplingLayout coupling_layout(const std::vector<Partition>& conductors, const Partition& circuit) {
    std::vector<Partition> all = conductors;
    all.push_back(circuit);
    Index n1 = 0, n2 = 0;
    for (const auto& p : all) {
        n1 += p.n1;
        n2 += p.n2;
    }
    const Index base[3] = {0, n1, n1 + n2};
    Index off[3] = {0, 0, 0};
    Index port = 0;
    CouplingLayout lay;
    for (std::size_t s = 0; s < all.size(); ++s) {
        std::vector<Index> idx;
        const Index sizes[3] = {all[s].n1, all[s].n2, all[s].n3};
        for (int k = 0; k < 3; ++k) {
            for (Index i = 0; i < sizes[k]; ++i) idx.push_back(base[k] + off[k] + i);
            off[k] += sizes[k];
        }
        if (s + 1 < all.size()) {
            lay.conductor_states.push_back(std::move(idx));
            lay.conductor_port_offset.push_back(port);
        } else {
            lay.circuit_states = std::move(idx);
            lay.circuit_port_offset = port;
        }
        port += all[s].m;
    }
    return lay;
}

struct CoupledSystem {
    EnergySystem system;
    CouplingLayout layout;
    PortBinding binding;
    InterconnectionSpec spec;
};

namespace detail {
inline void check_binding(const EnergySystem& circuit, const std::vector<EnergySystem>& conductors,
                          const std::vector<FieldKind>& kinds, const PortBinding& binding) {
    std::vector<std::vector<int>> used(conductors.size());
    for (std::size_t c = 0; c < conductors.size(); ++c) used[c].assign(static_cast<std::size_t>(conductors[c].m()), 0);
    std::vector<int> slot_used(static_cast<std::size_t>(circuit.m()), 0);
    for (const auto& e : binding.entries) {
        if (e.conductor < 0 || e.conductor >= static_cast<Index>(conductors.size()))
            throw StructureError("port '" + e.name + "' binds a missing conductor");
        const auto c = static_cast<std::size_t>(e.conductor);
        if (e.conductor_port < 0 || e.conductor_port >= conductors[c].m())
            throw StructureError("port '" + e.name + "' binds column " + std::to_string(e.conductor_port) +
                                 " but the conductor has " + std::to_string(conductors[c].m()) + " port(s)");
        if (e.circuit_input < 0 || e.circuit_input >= circuit.m())
            throw StructureError("port '" + e.name + "' binds a missing circuit slot");
        if (kinds[c] != e.kind)
            throw StructureError("port '" + e.name + "' is declared " + to_string(e.kind) + " but its model is " +
                                 to_string(kinds[c]));
        if (used[c][static_cast<std::size_t>(e.conductor_port)]++)
            throw StructureError("conductor port bound twice by '" + e.name + "'");
        if (slot_used[static_cast<std::size_t>(e.circuit_input)]++)
            throw StructureError("circuit slot bound twice by '" + e.name + "'");
    }
    for (std::size_t c = 0; c < conductors.size(); ++c)
        for (std::size_t p = 0; p < used[c].size(); ++p)
            if (!used[c][p])
                throw StructureError("port " + std::to_string(p) + " of conductor " + std::to_string(c) +
                                     " is not bound to the circuit");
}
}  // namespace detail

inline CoupledSystem couple(const EnergySystem& circuit, const std::vector<EnergySystem>& conductors,
                            const std::vector<FieldKind>& kinds, const PortBinding& binding,
                            const Tolerances& tol = {}) {
    if (kinds.size() != conductors.size()) throw StructureError("couple: one kind per conductor required");
    detail::check_binding(circuit, conductors, kinds, binding);
    std::vector<Partition> parts;
    for (const auto& c : conductors) parts.push_back(c.partition);
    CoupledSystem out;
    out.layout = coupling_layout(parts, circuit.partition);
    out.binding = binding;

    Index m = circuit.m();
    for (const auto& c : conductors) m += c.m();
    std::vector<Triplet> t;
    for (const auto& e : binding.entries) {
        const Index cp = out.layout.conductor_port_offset[static_cast<std::size_t>(e.conductor)] + e.conductor_port;
        const Index sp = out.layout.circuit_port_offset + e.circuit_input;
        t.emplace_back(sp, cp, 1.0);
        t.emplace_back(cp, sp, -1.0);
    }
    out.spec.F_skew = SpMat(m, m);
    out.spec.F_skew.setFromTriplets(t.begin(), t.end());
    out.spec.F_sym = zeros(m, m);

    if (conductors.empty()) {
        out.system = circuit;
        return out;
    }
    std::vector<EnergySystem> all = conductors;
    all.push_back(circuit);
    out.system = interconnect_all(all, out.spec, tol);
    return out;
}

/// Input for the coupled system: only the circuit's source slots are driven.
inline InputSignal coupled_inputs(const CoupledSystem& cs, const InputSignal& circuit_inputs) {
    InputSignal u(cs.system.m());
    for (Index k = 0; k < circuit_inputs.size(); ++k) u[cs.layout.circuit_port_offset + k] = circuit_inputs[k];
    return u;
}

/// Restriction of a coupled state to one subsystem.
inline Vec substate(const Vec& z, const std::vector<Index>& idx) {
    Vec out(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = z(idx[k]);
    return out;
}

/// Input a subsystem must have received for its own equations to hold at
/// (zdot1, z): least-squares solution of B u = lhs - (J - R) w.
inline Vec implied_input(const EnergySystem& sys, const Vec& zdot1, const Vec& z) {
    const auto& p = sys.partition;
    Vec lhs = Vec::Zero(p.n());
    lhs.head(p.n1) = sys.M1 * z.head(p.n1);
    const Vec w = structure_vector(sys, zdot1, z);
    const Vec rhs = lhs - (sys.J * w - sys.R * w);
    const Mat B = to_dense(sys.B);
    return B.colPivHouseholderQr().solve(rhs);
}

struct CouplingReport {
    std::vector<std::string> port_names;
    std::vector<double> max_defect;  ///< per bound port, max over steps
    double max_abs = 0.0;
    double scale = 0.0;  ///< max magnitude of the compared quantities
};

/// Checks, at every step midpoint, that each conductor's implied port input
/// equals the circuit quantity routed to it: the branch voltage A^T phi for
/// stranded and foil ports, the branch current j_sol for solid ports.
/// Field-state derivatives use the step difference quotient; circuit
/// derivatives are not needed.
inline CouplingReport verify_coupling_identities(const CoupledSystem& cs, const EnergySystem& circuit,
                                                 const std::vector<EnergySystem>& conductors, const Trajectory& tr) {
    CouplingReport rep;
    for (const auto& e : cs.binding.entries) rep.port_names.push_back(e.name);
    rep.max_defect.assign(cs.binding.entries.size(), 0.0);
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
        const Vec zmid = 0.5 * (tr.states[k] + tr.states[k + 1]);
        const Vec circ = substate(zmid, cs.layout.circuit_states);
        const Vec y_circ = output(circuit, Vec::Zero(0), circ);
        std::vector<Vec> u_cond;
        for (std::size_t c = 0; c < conductors.size(); ++c) {
            const auto& idx = cs.layout.conductor_states[c];
            const Vec zc = substate(zmid, idx);
            const Index n1 = conductors[c].partition.n1;
            Vec zdot1(n1);
            for (Index i = 0; i < n1; ++i)
                zdot1(i) = (tr.states[k + 1](idx[static_cast<std::size_t>(i)]) - tr.states[k](idx[static_cast<std::size_t>(i)])) / tr.tau;
            u_cond.push_back(implied_input(conductors[c], zdot1, zc));
        }
        for (std::size_t b = 0; b < cs.binding.entries.size(); ++b) {
            const auto& e = cs.binding.entries[b];
            const double lhs = u_cond[static_cast<std::size_t>(e.conductor)](e.conductor_port);
            const double rhs = -y_circ(e.circuit_input);
            rep.max_defect[b] = std::max(rep.max_defect[b], std::abs(lhs - rhs));
            rep.scale = std::max({rep.scale, std::abs(lhs), std::abs(rhs)});
        }
    }
    for (double d : rep.max_defect) rep.max_abs = std::max(rep.max_abs, d);
    return rep;
}

}  // namespace ebfc
