#pragma once

// Linear circuit netlists and the modified nodal analysis system
//
//   z2 = [phi; j_L], z3 = j_V, u = [i; v], S = I, E = blockdiag(A_C C A_C^T, L),
//   J = [[0, -A_L, -A_V], [A_L^T, 0, 0], [A_V^T, 0, 0]],
//   R = blockdiag(A_R G A_R^T, 0, 0),  B = -[[A_I, 0], [0, 0], [0, I]].
//
// Netlist grammar, one card per line, `#` starts a comment:
//   R<name> n+ n- <value>        resistance in ohm (stored as conductance)
//   C<name> n+ n- <value>
//   L<name> n+ n- <value>
//   V<name> n+ n- <waveform>     waveform: <value> | DC <value> | SIN off amp freq [phase]
//   I<name> n+ n- <waveform>
//   F<name> n+ n- <kind> <model> <column>     kind: stranded | solid | foil
//   .tran <tau> <t_end>
//   .method <tag>
//   .model <name> <manifest path>
//   .end
// Numbers accept one scale suffix from p n u m k M G (M is mega).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ebfc/energy_system.hpp"
#include "ebfc/errors.hpp"
#include "ebfc/waveform.hpp"

namespace ebfc {

enum class ElementKind { resistor, capacitor, inductor, vsource, isource, field_port };
enum class FieldKind { stranded, solid, foil };

inline const char* to_string(FieldKind k) {
    switch (k) {
        case FieldKind::stranded: return "stranded";
        case FieldKind::solid: return "solid";
        case FieldKind::foil: return "foil";
    }
    return "?";
}

struct Element {
    ElementKind kind = ElementKind::resistor;
    std::string name;
    std::string n_plus, n_minus;
    double value = 0.0;  ///< R (ohm), C (F) or L (H)
    Waveform waveform;   ///< sources
    FieldKind field_kind = FieldKind::stranded;
    std::string model;  ///< field ports
    Index column = 0;   ///< field ports
    std::size_t line = 0;

    friend bool operator==(const Element& a, const Element& b) {
        return a.kind == b.kind && a.name == b.name && a.n_plus == b.n_plus && a.n_minus == b.n_minus &&
               a.value == b.value && a.waveform.describe() == b.waveform.describe() &&
               (a.kind != ElementKind::field_port ||
                (a.field_kind == b.field_kind && a.model == b.model && a.column == b.column));
    }
};

struct ModelRef {
    std::string name;
    std::string path;
    friend bool operator==(const ModelRef&, const ModelRef&) = default;
};

struct Netlist {
    std::vector<Element> elements;
    std::vector<ModelRef> models;
    std::optional<double> tau;
    std::optional<double> t_end;
    std::optional<std::string> method;

    /// Non-ground nodes in order of first appearance.
    std::vector<std::string> nodes() const {
        std::vector<std::string> out;
        for (const auto& e : elements)
            for (const auto* n : {&e.n_plus, &e.n_minus})
                if (*n != "0" && std::find(out.begin(), out.end(), *n) == out.end()) out.push_back(*n);
        return out;
    }

    friend bool operator==(const Netlist& a, const Netlist& b) {
        return a.elements == b.elements && a.models == b.models && a.tau == b.tau && a.t_end == b.t_end &&
               a.method == b.method;
    }
};

namespace detail {

struct Token {
    std::string text;
    std::size_t column = 0;  ///< 1-based
};

inline std::vector<Token> tokenize(const std::string& line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i >= line.size()) break;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        out.push_back({line.substr(start, i - start), start + 1});
    }
    return out;
}

inline std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr == s.data()) return std::nullopt;
    const std::string_view rest(ptr, static_cast<std::size_t>(s.data() + s.size() - ptr));
    if (rest.empty()) return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
    if (rest.size() != 1) return std::nullopt;
    double scale = 1.0;
    switch (rest.front()) {
        case 'p': scale = 1e-12; break;
        case 'n': scale = 1e-9; break;
        case 'u': scale = 1e-6; break;
        case 'm': scale = 1e-3; break;
        case 'k': scale = 1e3; break;
        case 'M': scale = 1e6; break;
        case 'G': scale = 1e9; break;
        default: return std::nullopt;
    }
    const double out = v * scale;
    return std::isfinite(out) ? std::optional<double>(out) : std::nullopt;
}

inline bool valid_node_name(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; });
}

}  // namespace detail

inline Netlist parse_netlist(const std::string& text) {
    Netlist nl;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> names;
    std::set<std::string> model_names;
    bool ended = false;

    while (std::getline(is, line)) {
        ++lineno;
        if (const auto p = line.find('#'); p != std::string::npos) line.erase(p);
        const auto tok = detail::tokenize(line);
        if (tok.empty()) continue;
        if (ended) throw ParseError("card after .end", lineno, tok[0].column);

        auto number = [&](std::size_t k, const char* what) {
            if (k >= tok.size()) throw ParseError(std::string("missing ") + what, lineno, line.size() + 1);
            const auto v = detail::parse_number(tok[k].text);
            if (!v) throw ParseError("malformed number '" + tok[k].text + "'", lineno, tok[k].column);
            return *v;
        };
        auto expect_end = [&](std::size_t k) {
            if (tok.size() > k) throw ParseError("unexpected token '" + tok[k].text + "'", lineno, tok[k].column);
        };

        const std::string& head = tok[0].text;
        if (head.front() == '.') {
            if (head == ".tran") {
                const double tau = number(1, "time step"), tend = number(2, "end time");
                if (!(tau > 0.0)) throw ParseError("time step must be positive", lineno, tok[1].column);
                if (!(tend > 0.0)) throw ParseError("end time must be positive", lineno, tok[2].column);
                expect_end(3);
                nl.tau = tau;
                nl.t_end = tend;
            } else if (head == ".method") {
                if (tok.size() < 2) throw ParseError("missing method tag", lineno, line.size() + 1);
                expect_end(2);
                nl.method = tok[1].text;
            } else if (head == ".model") {
                if (tok.size() < 3) throw ParseError(".model needs a name and a manifest path", lineno, line.size() + 1);
                expect_end(3);
                if (!model_names.insert(tok[1].text).second)
                    throw ParseError("duplicate model '" + tok[1].text + "'", lineno, tok[1].column);
                nl.models.push_back({tok[1].text, tok[2].text});
            } else if (head == ".end") {
                expect_end(1);
                ended = true;
            } else {
                throw ParseError("unknown directive '" + head + "'", lineno, tok[0].column);
            }
            continue;
        }

        Element e;
        e.line = lineno;
        e.name = head;
        const char card = static_cast<char>(std::toupper(static_cast<unsigned char>(head.front())));
        switch (card) {
            case 'R': e.kind = ElementKind::resistor; break;
            case 'C': e.kind = ElementKind::capacitor; break;
            case 'L': e.kind = ElementKind::inductor; break;
            case 'V': e.kind = ElementKind::vsource; break;
            case 'I': e.kind = ElementKind::isource; break;
            case 'F': e.kind = ElementKind::field_port; break;
            default: throw ParseError(std::string("unknown card '") + head.front() + "'", lineno, tok[0].column);
        }
        if (head.size() < 2) throw ParseError("element name needs at least one character after the card letter", lineno, tok[0].column);
        if (const auto it = names.find(head); it != names.end())
            throw ParseError("duplicate element name '" + head + "' (first defined at line " +
                                 std::to_string(it->second) + ")",
                             lineno, tok[0].column);
        if (tok.size() < 3) throw ParseError("element needs two nodes", lineno, line.size() + 1);
        for (std::size_t k : {1u, 2u})
            if (!detail::valid_node_name(tok[k].text))
                throw ParseError("invalid node name '" + tok[k].text + "'", lineno, tok[k].column);
        e.n_plus = tok[1].text;
        e.n_minus = tok[2].text;
        if (e.n_plus == e.n_minus) throw ParseError("element connects node '" + e.n_plus + "' to itself", lineno, tok[2].column);

        switch (e.kind) {
            case ElementKind::resistor:
            case ElementKind::capacitor:
            case ElementKind::inductor: {
                e.value = number(3, "element value");
                if (!(e.value > 0.0)) throw ParseError("element value must be positive", lineno, tok[3].column);
                expect_end(4);
                break;
            }
            case ElementKind::vsource:
            case ElementKind::isource: {
                if (tok.size() < 4) throw ParseError("missing source value", lineno, line.size() + 1);
                const std::string& w = tok[3].text;
                if (w == "DC") {
                    e.waveform = Constant{number(4, "DC value")};
                    expect_end(5);
                } else if (w == "SIN") {
                    Sinusoid s;
                    s.offset = number(4, "SIN offset");
                    s.amplitude = number(5, "SIN amplitude");
                    s.frequency = number(6, "SIN frequency");
                    if (s.frequency < 0.0) throw ParseError("SIN frequency must be non-negative", lineno, tok[6].column);
                    if (tok.size() > 7) s.phase = number(7, "SIN phase");
                    expect_end(8);
                    e.waveform = s;
                } else {
                    e.waveform = Constant{number(3, "source value")};
                    expect_end(4);
                }
                break;
            }
            case ElementKind::field_port: {
                if (tok.size() < 6) throw ParseError("field port needs kind, model and column", lineno, line.size() + 1);
                const std::string& k = tok[3].text;
                if (k == "stranded") e.field_kind = FieldKind::stranded;
                else if (k == "solid") e.field_kind = FieldKind::solid;
                else if (k == "foil") e.field_kind = FieldKind::foil;
                else throw ParseError("unknown conductor kind '" + k + "'", lineno, tok[3].column);
                e.model = tok[4].text;
                long col = -1;
                const auto& ct = tok[5].text;
                const auto [ptr, ec] = std::from_chars(ct.data(), ct.data() + ct.size(), col);
                if (ec != std::errc() || ptr != ct.data() + ct.size() || col < 0)
                    throw ParseError("malformed column index '" + ct + "'", lineno, tok[5].column);
                e.column = col;
                expect_end(6);
                break;
            }
        }
        names[head] = lineno;
        nl.elements.push_back(std::move(e));
    }

    for (const auto& e : nl.elements)
        if (e.kind == ElementKind::field_port && !model_names.count(e.model)) {
            const auto tok = [&] {
                std::istringstream again(text);
                std::string l;
                for (std::size_t k = 0; k < e.line; ++k) std::getline(again, l);
                return detail::tokenize(l);
            }();
            throw ParseError("undeclared model '" + e.model + "'", e.line, tok.size() > 4 ? tok[4].column : 0);
        }
    if (!nl.elements.empty()) {
        const bool has_ground = std::any_of(nl.elements.begin(), nl.elements.end(),
                                            [](const Element& e) { return e.n_plus == "0" || e.n_minus == "0"; });
        if (!has_ground) throw ParseError("no element connects to ground node '0'", nl.elements.front().line, 1);
    }
    return nl;
}

/// Canonical text; parse(print(n)) == n.
inline std::string print_netlist(const Netlist& nl) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& m : nl.models) os << ".model " << m.name << ' ' << m.path << '\n';
    for (const auto& e : nl.elements) {
        os << e.name << ' ' << e.n_plus << ' ' << e.n_minus << ' ';
        switch (e.kind) {
            case ElementKind::resistor:
            case ElementKind::capacitor:
            case ElementKind::inductor: os << e.value; break;
            case ElementKind::vsource:
            case ElementKind::isource: os << e.waveform.describe(); break;
            case ElementKind::field_port: os << to_string(e.field_kind) << ' ' << e.model << ' ' << e.column; break;
        }
        os << '\n';
    }
    if (nl.tau && nl.t_end) os << ".tran " << *nl.tau << ' ' << *nl.t_end << '\n';
    if (nl.method) os << ".method " << *nl.method << '\n';
    os << ".end\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Incidence

/// A field port column in the circuit's input vector.
struct FieldPortSlot {
    std::string name;
    FieldKind kind = FieldKind::stranded;
    std::string model;
    Index column = 0;
    Index input_index = 0;  ///< position in u = [i; v]
};

struct IncidenceSet {
    std::vector<std::string> nodes;  ///< non-ground nodes, row order
    SpMat A_C, A_R, A_L, A_V, A_I;
    Vec C, G, L;  ///< diagonal element values
    std::vector<std::string> names_C, names_R, names_L;
    std::vector<std::string> names_V;  ///< columns of A_V: solid ports, then voltage sources
    std::vector<std::string> names_I;  ///< columns of A_I: stranded ports, foil ports, then current sources
    std::vector<Waveform> waveform_V, waveform_I;  ///< zero for field-port columns
    std::vector<FieldPortSlot> field_ports;        ///< in netlist order

    Index n_nodes() const { return static_cast<Index>(nodes.size()); }
    Index m() const { return A_I.cols() + A_V.cols(); }

    /// Circuit-only input u = [i; v]: sources drive their slots, field-port slots stay zero.
    InputSignal source_inputs() const {
        std::vector<Waveform> w = waveform_I;
        w.insert(w.end(), waveform_V.begin(), waveform_V.end());
        return InputSignal(std::move(w));
    }
};

inline IncidenceSet build_incidence(const Netlist& nl) {
    IncidenceSet inc;
    inc.nodes = nl.nodes();
    std::map<std::string, Index> row;
    for (std::size_t k = 0; k < inc.nodes.size(); ++k) row[inc.nodes[k]] = static_cast<Index>(k);

    // Reachability from ground through any element.
    std::vector<Index> parent(inc.nodes.size() + 1);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](Index a) {
        while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        return a;
    };
    const auto ground = static_cast<Index>(inc.nodes.size());
    auto id = [&](const std::string& n) { return n == "0" ? ground : row.at(n); };
    for (const auto& e : nl.elements) parent[static_cast<std::size_t>(find(id(e.n_plus)))] = find(id(e.n_minus));
    for (std::size_t k = 0; k < inc.nodes.size(); ++k)
        if (find(static_cast<Index>(k)) != find(ground))
            throw StructureError("floating node '" + inc.nodes[k] + "' has no path to ground");

    std::vector<const Element*> C, R, L, V, I;
    std::vector<const Element*> f_str, f_foil, f_sol;
    for (const auto& e : nl.elements) {
        switch (e.kind) {
            case ElementKind::resistor: R.push_back(&e); break;
            case ElementKind::capacitor: C.push_back(&e); break;
            case ElementKind::inductor: L.push_back(&e); break;
            case ElementKind::vsource: V.push_back(&e); break;
            case ElementKind::isource: I.push_back(&e); break;
            case ElementKind::field_port:
                (e.field_kind == FieldKind::stranded ? f_str : e.field_kind == FieldKind::foil ? f_foil : f_sol)
                    .push_back(&e);
                break;
        }
    }
    std::vector<const Element*> Icols = f_str;
    Icols.insert(Icols.end(), f_foil.begin(), f_foil.end());
    Icols.insert(Icols.end(), I.begin(), I.end());
    std::vector<const Element*> Vcols = f_sol;
    Vcols.insert(Vcols.end(), V.begin(), V.end());

    const Index n = inc.n_nodes();
    auto incidence = [&](const std::vector<const Element*>& els) {
        std::vector<Triplet> t;
        for (std::size_t j = 0; j < els.size(); ++j) {
            if (els[j]->n_plus != "0") t.emplace_back(row.at(els[j]->n_plus), static_cast<Index>(j), 1.0);
            if (els[j]->n_minus != "0") t.emplace_back(row.at(els[j]->n_minus), static_cast<Index>(j), -1.0);
        }
        SpMat a(n, static_cast<Index>(els.size()));
        a.setFromTriplets(t.begin(), t.end());
        return a;
    };
    auto values = [](const std::vector<const Element*>& els, bool invert) {
        Vec v(static_cast<Index>(els.size()));
        for (std::size_t j = 0; j < els.size(); ++j) v(static_cast<Index>(j)) = invert ? 1.0 / els[j]->value : els[j]->value;
        return v;
    };
    auto names = [](const std::vector<const Element*>& els) {
        std::vector<std::string> out;
        for (const auto* e : els) out.push_back(e->name);
        return out;
    };
    inc.A_C = incidence(C);
    inc.A_R = incidence(R);
    inc.A_L = incidence(L);
    inc.A_V = incidence(Vcols);
    inc.A_I = incidence(Icols);
    inc.C = values(C, false);
    inc.G = values(R, true);
    inc.L = values(L, false);
    inc.names_C = names(C);
    inc.names_R = names(R);
    inc.names_L = names(L);
    inc.names_V = names(Vcols);
    inc.names_I = names(Icols);
    for (const auto* e : Icols) inc.waveform_I.push_back(e->kind == ElementKind::field_port ? Waveform{} : e->waveform);
    for (const auto* e : Vcols) inc.waveform_V.push_back(e->kind == ElementKind::field_port ? Waveform{} : e->waveform);

    const auto bI = static_cast<Index>(Icols.size());
    for (const auto& e : nl.elements) {
        if (e.kind != ElementKind::field_port) continue;
        FieldPortSlot s{e.name, e.field_kind, e.model, e.column, 0};
        if (e.field_kind == FieldKind::solid)
            s.input_index = bI + static_cast<Index>(std::find(Vcols.begin(), Vcols.end(), &e) - Vcols.begin());
        else
            s.input_index = static_cast<Index>(std::find(Icols.begin(), Icols.end(), &e) - Icols.begin());
        inc.field_ports.push_back(s);
    }
    return inc;
}

inline EnergySystem mna_system(const IncidenceSet& inc) {
    const Index nphi = inc.n_nodes(), bL = inc.A_L.cols(), bV = inc.A_V.cols(), bI = inc.A_I.cols();
    EnergySystem s = make_zero_system({0, nphi + bL, bV, bI + bV});
    const SpMat Cd = to_sparse(Mat(inc.C.asDiagonal()));
    const SpMat Gd = to_sparse(Mat(inc.G.asDiagonal()));
    const SpMat Ld = to_sparse(Mat(inc.L.asDiagonal()));
    s.E = block_diag({SpMat(inc.A_C * Cd * SpMat(inc.A_C.transpose())), Ld});
    s.M2 = s.E;
    s.S = identity(nphi + bL);
    const std::vector<Index> sz{nphi, bL, bV};
    s.J = BlockBuilder(sz, sz)
              .set(0, 1, inc.A_L, -1.0)
              .set(0, 2, inc.A_V, -1.0)
              .set(1, 0, SpMat(inc.A_L.transpose()))
              .set(2, 0, SpMat(inc.A_V.transpose()))
              .build();
    s.R = block_diag({SpMat(inc.A_R * Gd * SpMat(inc.A_R.transpose())), zeros(bL, bL), zeros(bV, bV)});
    s.B = BlockBuilder(sz, {bI, bV}).set(0, 0, inc.A_I, -1.0).set(2, 1, identity(bV), -1.0).build();
    for (const auto& n : inc.nodes) s.state_names.push_back("phi[" + n + "]");
    for (const auto& n : inc.names_L) s.state_names.push_back("i[" + n + "]");
    for (const auto& n : inc.names_V) s.state_names.push_back("i[" + n + "]");
    for (const auto& n : inc.names_I) s.port_names.push_back(n + ".i");
    for (const auto& n : inc.names_V) s.port_names.push_back(n + ".v");
    s.E.prune(0.0);
    s.M2.prune(0.0);
    s.J.prune(0.0);
    s.R.prune(0.0);
    s.B.prune(0.0);
    return s;
}

}  // namespace ebfc
