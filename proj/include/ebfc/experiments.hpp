#pragma once

// LC oscillator with a field-modelled coil: a capacitor in parallel with an
// axisymmetric winding (stranded, solid or foil), optionally driven by a
// voltage source across the capacitor.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ebfc/conductors.hpp"
#include "ebfc/coupling.hpp"
#include "ebfc/fem_axi.hpp"
#include "ebfc/integrators.hpp"
#include "ebfc/mna.hpp"

namespace ebfc {

// The turn count puts L = X^T K^-1 X near 0.5 uH, so with C = 100 uF the
// period is about 44 us and a 50 us run sees two current zero crossings.
inline constexpr const char* default_oscillator_geometry = R"(# axisymmetric coil around a magnetic core, lengths in mm
domain 0 20 0 40
rect core 0 5 5 35
rect coil 6 11 8 32
h 1
turns coil 5
material core mu_r 100 sigma 0
material coil mu_r 1 sigma 0
material air mu_r 1 sigma 0
)";

inline fem::Geometry default_geometry() {
    std::istringstream is(default_oscillator_geometry);
    return fem::parse_geometry(is);
}

// ---------------------------------------------------------------------------
// Closed-form LC reference

struct AnalyticState {
    double phi = 0.0;
    double i = 0.0;
    double H0 = 0.0;
};

inline AnalyticState analytic_reference(double L, double C, double v0, double i0, double t) {
    if (!(L > 0.0) || !(C > 0.0)) throw StructureError("analytic_reference needs L > 0 and C > 0");
    const double w = 1.0 / std::sqrt(L * C);
    const double c = std::cos(w * t), s = std::sin(w * t);
    return {v0 * c + i0 / (C * w) * s, i0 * c - v0 / (L * w) * s, 0.5 * C * v0 * v0 + 0.5 * L * i0 * i0};
}

// ---------------------------------------------------------------------------
// Configuration and model

enum class ConductorKind { stranded, solid, foil };

inline const char* to_string(ConductorKind k) {
    switch (k) {
        case ConductorKind::stranded: return "stranded";
        case ConductorKind::solid: return "solid";
        case ConductorKind::foil: return "foil";
    }
    return "?";
}

inline std::optional<ConductorKind> parse_conductor_kind(const std::string& s) {
    if (s == "stranded") return ConductorKind::stranded;
    if (s == "solid") return ConductorKind::solid;
    if (s == "foil") return ConductorKind::foil;
    return std::nullopt;
}

struct OscillatorConfig {
    ConductorKind conductor = ConductorKind::stranded;
    bool core_conductive = false;
    double sigma_core = 100.0;       ///< S/m when the core conducts
    double sigma_conductor = 58e6;   ///< S/m for solid and foil coils, and for the strand resistance
    bool winding_resistance = false;  ///< stranded: include R_str = X^T M_str^+ X
    double C = 100e-6;
    double v0 = 1.0;
    double i0 = 0.0;
    double tau = 0.1e-6;
    double t_end = 50e-6;
    MethodTag method = MethodTag::trapezoidal;
    double h = 0.0;  ///< mesh size in metres, 0 keeps the geometry's value
    fem::Geometry geometry = default_geometry();
    std::optional<Waveform> parallel_source;  ///< voltage source across the capacitor

    void validate() const {
        if (!(tau > 0.0) || !(t_end > 0.0) || !(C > 0.0) || h < 0.0)
            throw StructureError("oscillator configuration needs tau, t_end, C > 0 and h >= 0");
    }
};

struct OscillatorModel {
    fem::FieldMatrices field;
    ConductorModel conductor;
    Netlist netlist;
    IncidenceSet incidence;
    EnergySystem circuit;
    EnergySystem conductor_system;
    CoupledSystem coupled;
    InputSignal inputs;
    Vec z0;
    Index phi_index = 0;      ///< capacitor node potential
    Index current_index = 0;  ///< coil current
    double L = std::numeric_limits<double>::quiet_NaN();  ///< lumped inductance (stranded)
    double turns = 0.0;

    const EnergySystem& system() const { return coupled.system; }
};

inline std::string oscillator_netlist(const OscillatorConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << ".model coil builtin\n";
    os << "C1 1 0 " << cfg.C << '\n';
    os << "F1 0 1 " << to_string(cfg.conductor) << " coil 0\n";
    if (cfg.parallel_source) os << "V1 1 0 " << cfg.parallel_source->describe() << '\n';
    os << ".tran " << cfg.tau << ' ' << cfg.t_end << '\n';
    os << ".method " << to_string(cfg.method) << '\n';
    return os.str();
}

inline OscillatorModel build_oscillator(const OscillatorConfig& cfg) {
    cfg.validate();
    OscillatorModel mdl;
    fem::Geometry g = cfg.geometry;
    if (cfg.h > 0.0) g.h = cfg.h;
    const bool massive = cfg.conductor != ConductorKind::stranded;
    g.materials["core"].sigma = cfg.core_conductive ? cfg.sigma_core : 0.0;
    g.materials["coil"].sigma = massive ? cfg.sigma_conductor : 0.0;
    const auto mesh = fem::build_rect_mesh(g);
    mdl.field = fem::assemble_field(mesh, g.material_map());
    const auto& f = mdl.field;

    if (cfg.conductor == ConductorKind::stranded) {
        const auto it = g.turns.find("coil");
        if (it == g.turns.end()) throw StructureError("geometry lacks a turn count for region 'coil'");
        mdl.turns = it->second;
        const Vec X = f.dofs.reduce(fem::assemble_stranded_column(mesh, "coil", mdl.turns));
        StrandedModel s{f.M_sigma, f.K_nu, Mat(X), Mat::Zero(1, 1)};
        if (cfg.winding_resistance) {
            fem::MaterialMap strand;
            for (const auto& name : mesh.region_names) strand.sigma[name] = 0.0;
            strand.sigma["coil"] = cfg.sigma_conductor;
            const SpMat M_str = f.dofs.reduce(fem::assemble_M_sigma(mesh, strand));
            s.R_str = winding_resistance(M_str, s.X);
        }
        mdl.L = lumped_inductance(f.K_nu, s.X)(0, 0);
        mdl.conductor = s;
    } else {
        const SpMat M_full = fem::assemble_M_sigma(mesh, g.material_map());
        const auto col = fem::assemble_solid_column(mesh, "coil", g.material_map(), M_full);
        auto s = SolidModel::make(f.M_sigma, f.K_nu, Mat(f.dofs.reduce(col.chi)));
        if (cfg.conductor == ConductorKind::solid) mdl.conductor = s;
        else mdl.conductor = foil_from_solid(s);
    }

    mdl.netlist = parse_netlist(oscillator_netlist(cfg));
    mdl.incidence = build_incidence(mdl.netlist);
    mdl.circuit = mna_system(mdl.incidence);
    mdl.conductor_system = conductor_system(mdl.conductor, "coil");
    mdl.coupled = couple(mdl.circuit, {mdl.conductor_system}, {mdl.incidence.field_ports.front().kind},
                         bind_ports(mdl.incidence, {"coil"}));
    mdl.inputs = coupled_inputs(mdl.coupled, mdl.incidence.source_inputs());

    const auto& lay = mdl.coupled.layout;
    const auto& sys = mdl.coupled.system;
    mdl.phi_index = lay.circuit_states.front();
    const auto& cst = lay.conductor_states.front();
    switch (cfg.conductor) {
        case ConductorKind::stranded:
        case ConductorKind::foil: mdl.current_index = cst.back(); break;
        case ConductorKind::solid: {
            const Index nphi = mdl.incidence.n_nodes(), bL = mdl.incidence.A_L.cols();
            mdl.current_index = lay.circuit_states[static_cast<std::size_t>(nphi + bL)];
            break;
        }
    }

    Vec z = Vec::Zero(sys.n());
    z(mdl.phi_index) = cfg.v0;
    std::vector<bool> fixed(static_cast<std::size_t>(sys.n()), false);
    for (Index i = 0; i < sys.partition.n1 + sys.partition.n2; ++i) fixed[static_cast<std::size_t>(i)] = true;
    if (cfg.i0 != 0.0) {
        if (cfg.conductor != ConductorKind::stranded || cfg.core_conductive)
            throw StructureError("a nonzero initial current is supported for the lossless stranded coil only");
        // field in equilibrium with the winding current: K a = X i0
        const auto& s = std::get<StrandedModel>(mdl.conductor);
        Eigen::SimplicialLDLT<SpMat> ldlt(f.K_nu);
        const Vec a = ldlt.solve(Vec(s.X.col(0) * cfg.i0));
        for (Index i = 0; i < a.size(); ++i) z(cst[static_cast<std::size_t>(i)]) = a(i);
        z(mdl.current_index) = cfg.i0;
    }
    mdl.z0 = consistent_init(sys, z, mdl.inputs(0.0), fixed).z;
    return mdl;
}

// ---------------------------------------------------------------------------
// Frequency measurement

/// Angular frequency from the linearly interpolated sign changes of a
/// sampled signal after its first sample. Needs at least two crossings.
inline double measure_omega(const std::vector<double>& t, const std::vector<double>& v) {
    std::vector<double> cross;
    for (std::size_t k = 1; k + 1 < t.size(); ++k) {
        const double a = v[k], b = v[k + 1];
        if (a == 0.0) cross.push_back(t[k]);
        else if ((a < 0.0) != (b < 0.0) && b != 0.0) cross.push_back(t[k] + (t[k + 1] - t[k]) * a / (a - b));
    }
    if (cross.size() < 2) throw NumericalError("fewer than two zero crossings; extend the simulated interval");
    const double half = (cross.back() - cross.front()) / static_cast<double>(cross.size() - 1);
    return std::numbers::pi / half;
}

// ---------------------------------------------------------------------------
// Runs

struct OscillatorReport {
    Trajectory trajectory;
    double H0 = 0.0;
    double max_rel_dH = 0.0;          ///< max_k |H_k - H_0| / H_0
    double max_rel_balance = 0.0;     ///< max_k |H_k + D_k - E_k - H_0| / H_0
    bool strictly_decreasing = true;  ///< H_{k+1} < H_k for every step
    double total_decay = 0.0;         ///< (H_0 - H_end) / H_0
    double omega_reference = std::numeric_limits<double>::quiet_NaN();
    double omega_measured = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> warnings;
};

inline OscillatorReport summarize(const OscillatorModel& mdl, Trajectory tr, double C) {
    OscillatorReport r;
    r.trajectory = std::move(tr);
    const auto& t = r.trajectory;
    r.H0 = t.hamiltonians.front();
    const double scale = r.H0 != 0.0 ? std::abs(r.H0) : 1.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        r.max_rel_dH = std::max(r.max_rel_dH, std::abs(t.hamiltonians[k] - r.H0) / scale);
        r.max_rel_balance = std::max(
            r.max_rel_balance, std::abs(t.hamiltonians[k] + t.dissipated_cum[k] - t.supplied_cum[k] - r.H0) / scale);
        if (k > 0 && !(t.hamiltonians[k] < t.hamiltonians[k - 1])) r.strictly_decreasing = false;
    }
    r.total_decay = (r.H0 - t.hamiltonians.back()) / scale;
    if (std::isfinite(mdl.L)) {
        r.omega_reference = 1.0 / std::sqrt(mdl.L * C);
        std::vector<double> cur;
        for (const auto& z : t.states) cur.push_back(z(mdl.current_index));
        try {
            r.omega_measured = measure_omega(t.times, cur);
        } catch (const NumericalError& e) {
            r.warnings.emplace_back(e.what());
        }
    }
    return r;
}

inline OscillatorReport run_oscillator(const OscillatorConfig& cfg, const OscillatorModel& mdl) {
    auto tr = simulate(mdl.system(), mdl.z0, mdl.inputs, cfg.tau, cfg.t_end, Method::make(cfg.method));
    return summarize(mdl, std::move(tr), cfg.C);
}

inline OscillatorReport run_oscillator(const OscillatorConfig& cfg) { return run_oscillator(cfg, build_oscillator(cfg)); }

struct Index2Report {
    Trajectory trajectory;
    double defect_end = 0.0;  ///< |H - (E_in - D_cum)| at t_end, absolute
    double scale = 0.0;       ///< max over the run of |H| and |E_in|
    double max_defect = 0.0;  ///< max over the run
    std::vector<std::string> warnings;

    double relative_defect_end() const { return scale > 0.0 ? defect_end / scale : defect_end; }
};

/// Stranded lossless oscillator with a voltage source across the capacitor.
inline OscillatorConfig index2_config(OscillatorConfig cfg, double amplitude = 1.0, double frequency = 50e3) {
    cfg.conductor = ConductorKind::stranded;
    cfg.core_conductive = false;
    cfg.winding_resistance = false;
    cfg.v0 = 0.0;
    cfg.i0 = 0.0;
    cfg.parallel_source = Waveform(Sinusoid{0.0, amplitude, frequency, 0.0});
    return cfg;
}

inline Index2Report run_index2(const OscillatorConfig& cfg, const OscillatorModel& mdl) {
    Index2Report r;
    if (cfg.method == MethodTag::gauss4)
        r.warnings.emplace_back("gauss4 is not stiffly accurate; its use on this index-2 configuration is untested");
    r.trajectory = simulate(mdl.system(), mdl.z0, mdl.inputs, cfg.tau, cfg.t_end, Method::make(cfg.method));
    const auto& t = r.trajectory;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double d = std::abs(t.hamiltonians[k] - (t.supplied_cum[k] - t.dissipated_cum[k]));
        r.max_defect = std::max(r.max_defect, d);
        r.scale = std::max({r.scale, std::abs(t.hamiltonians[k]), std::abs(t.supplied_cum[k])});
    }
    r.defect_end = std::abs(t.hamiltonians.back() - (t.supplied_cum.back() - t.dissipated_cum.back()));
    return r;
}

inline Index2Report run_index2(const OscillatorConfig& cfg) { return run_index2(cfg, build_oscillator(cfg)); }

// ---------------------------------------------------------------------------
// Convergence study

struct ConvergenceRow {
    MethodTag method;
    double tau = 0.0;
    double eps_z = 0.0;
    double eps_H = 0.0;
    bool saturated = false;  ///< excluded from the slope fit
};

struct SlopeFit {
    MethodTag method;
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::size_t points = 0;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;
    std::vector<SlopeFit> fits;
    double L = 0.0;
    double reference_scale = 0.0;
    double t_end = 0.0;  ///< common horizon actually simulated
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw NumericalError("slope fit needs at least two points");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double lx = std::log(x[k]), ly = std::log(y[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Lossless stranded oscillator against the closed-form LC solution. Points
/// with eps_z below 1e3 * machine epsilon * reference scale are treated as
/// round-off saturated and left out of the fit.
inline ConvergenceResult run_convergence(OscillatorConfig cfg, const std::vector<MethodTag>& methods,
                                         const std::vector<double>& taus) {
    cfg.conductor = ConductorKind::stranded;
    cfg.core_conductive = false;
    cfg.winding_resistance = false;
    cfg.parallel_source.reset();
    if (taus.empty()) throw StructureError("run_convergence needs at least one time step");
    // Common horizon: the largest multiple of the coarsest step not beyond t_end.
    const double coarse = *std::max_element(taus.begin(), taus.end());
    const double horizon = std::floor(cfg.t_end / coarse * (1.0 + 1e-12)) * coarse;
    if (!(horizon > 0.0)) throw StructureError("t_end is shorter than the coarsest time step");
    const auto mdl = build_oscillator(cfg);
    ConvergenceResult res;
    res.L = mdl.L;
    res.t_end = horizon;
    const double w = 1.0 / std::sqrt(mdl.L * cfg.C);
    res.reference_scale = std::max(std::abs(cfg.v0) + std::abs(cfg.i0) / (cfg.C * w),
                                   std::abs(cfg.i0) + std::abs(cfg.v0) / (mdl.L * w));
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * res.reference_scale;
    const std::vector<Index> comps{mdl.phi_index, mdl.current_index};
    auto ref = [&](double t) {
        const auto a = analytic_reference(mdl.L, cfg.C, cfg.v0, cfg.i0, t);
        Vec v(2);
        v << a.phi, a.i;
        return v;
    };
    for (const auto m : methods) {
        std::vector<double> xs, ys;
        for (const double tau : taus) {
            const auto tr = simulate(mdl.system(), mdl.z0, mdl.inputs, tau, horizon, Method::make(m));
            const auto e = error_measures(tr, ref, comps);
            ConvergenceRow row{m, tau, e.eps_z, e.eps_H, e.eps_z < floor};
            if (!row.saturated) {
                xs.push_back(tau);
                ys.push_back(e.eps_z);
            }
            res.rows.push_back(row);
        }
        SlopeFit fit{m, std::numeric_limits<double>::quiet_NaN(), xs.size()};
        if (xs.size() >= 2) fit.slope = loglog_slope(xs, ys);
        res.fits.push_back(fit);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Output files

/// Writes via a temporary file in the same directory, then renames.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << content;
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// gnuplot script plotting H, D_cum and E_in from a trajectory CSV.
inline std::string gnuplot_energy_script(const std::string& csv_name, const std::string& title) {
    std::ostringstream os;
    os << "set datafile separator ','\n"
       << "set key autotitle columnhead\n"
       << "set title '" << title << "'\n"
       << "set xlabel 't [s]'\nset ylabel 'energy [J]'\n"
       << "plot '" << csv_name << "' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n";
    return os.str();
}

}  // namespace ebfc
