// Command-line front end. Every run resolves its options into a flat
// key = value parameter set, executes from that set only, and writes it
// back as the run manifest, so `--from-manifest` reproduces a run exactly.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ebfc/conductors.hpp"
#include "ebfc/coupling.hpp"
#include "ebfc/energy_system.hpp"
#include "ebfc/experiments.hpp"
#include "ebfc/fem_axi.hpp"
#include "ebfc/integrators.hpp"
#include "ebfc/mna.hpp"

namespace fs = std::filesystem;
using namespace ebfc;

namespace {

using Params = std::map<std::string, std::string>;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double number(const Params& p, const std::string& key) {
    const auto it = p.find(key);
    if (it == p.end()) throw ParseError("missing parameter '" + key + "'");
    const auto v = ebfc::detail::parse_number(it->second);
    if (!v) throw ParseError("parameter '" + key + "' is not a number: '" + it->second + "'");
    return *v;
}

bool flag(const Params& p, const std::string& key) {
    const auto it = p.find(key);
    return it != p.end() && (it->second == "true" || it->second == "1");
}

std::string get(const Params& p, const std::string& key, const std::string& def = {}) {
    const auto it = p.find(key);
    return it == p.end() ? def : it->second;
}

MethodTag method_of(const std::string& s) {
    const auto m = parse_method(s);
    if (!m) throw ParseError("unknown method '" + s + "'");
    return *m;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string manifest_text(const Params& p, const Params& results) {
    std::ostringstream os;
    os << "# run manifest; rerun with: ebfc --from-manifest <this file>\n";
    for (const auto& [k, v] : p) os << k << " = " << v << '\n';
    for (const auto& [k, v] : results) os << "result." << k << " = " << v << '\n';
    return os.str();
}

Params read_params(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw ParseError("cannot open manifest " + file.string());
    Params p;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, first + 1);
        auto trim = [](const std::string& s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const auto key = trim(line.substr(0, eq));
        if (key.rfind("result.", 0) == 0) continue;
        p[key] = trim(line.substr(eq + 1));
    }
    return p;
}

OscillatorConfig oscillator_config(const Params& p) {
    OscillatorConfig cfg;
    const auto kind = parse_conductor_kind(get(p, "conductor", "stranded"));
    if (!kind) throw ParseError("unknown conductor kind '" + get(p, "conductor") + "'");
    cfg.conductor = *kind;
    cfg.core_conductive = flag(p, "conductive_core");
    cfg.winding_resistance = flag(p, "winding_resistance");
    cfg.C = number(p, "C");
    cfg.v0 = number(p, "v0");
    cfg.i0 = number(p, "i0");
    cfg.tau = number(p, "tau");
    cfg.t_end = number(p, "t_end");
    cfg.method = method_of(get(p, "method"));
    cfg.h = number(p, "mesh_h");
    if (const auto g = get(p, "geometry"); !g.empty() && g != "builtin") cfg.geometry = fem::read_geometry(g);
    return cfg;
}

struct Outputs {
    fs::path dir;
    std::string stem;
    fs::path csv() const { return dir / (stem + ".csv"); }
};

void write_run(const Outputs& o, const Params& p, const Params& results, const std::string& csv,
               const std::string& title) {
    write_file_atomic(o.csv(), csv);
    write_file_atomic(o.dir / (o.stem + ".gp"), gnuplot_energy_script(o.stem + ".csv", title));
    write_file_atomic(o.dir / (o.stem + ".manifest"), manifest_text(p, results));
}

void print_results(const Params& results) {
    for (const auto& [k, v] : results) std::cout << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------

int run_oscillator_cmd(const Params& p) {
    const auto cfg = oscillator_config(p);
    const auto mdl = build_oscillator(cfg);
    const auto rep = run_oscillator(cfg, mdl);
    std::ostringstream csv;
    write_csv(csv, mdl.system(), rep.trajectory, {mdl.phi_index, mdl.current_index}, false);
    Params res{{"free_dofs", std::to_string(mdl.field.K_nu.rows())},
               {"H0", fmt(rep.H0)},
               {"max_rel_dH", fmt(rep.max_rel_dH)},
               {"max_rel_balance_defect", fmt(rep.max_rel_balance)},
               {"H_strictly_decreasing", rep.strictly_decreasing ? "true" : "false"}};
    if (std::isfinite(mdl.L)) {
        res["L"] = fmt(mdl.L);
        res["omega_reference"] = fmt(rep.omega_reference);
        res["omega_measured"] = fmt(rep.omega_measured);
        res["omega_rel_error"] = fmt(std::abs(rep.omega_measured / rep.omega_reference - 1.0));
    }
    for (std::size_t k = 0; k < rep.warnings.size(); ++k) res["warning" + std::to_string(k)] = rep.warnings[k];
    write_run({get(p, "out"), "oscillator"}, p, res, csv.str(), "oscillator energy");
    print_results(res);
    return 0;
}

int run_index2_cmd(const Params& p) {
    auto cfg = index2_config(oscillator_config(p), number(p, "amplitude"), number(p, "frequency"));
    const auto mdl = build_oscillator(cfg);
    const auto rep = run_index2(cfg, mdl);
    std::ostringstream csv;
    write_csv(csv, mdl.system(), rep.trajectory, {mdl.phi_index, mdl.current_index}, false);
    Params res{{"defect_end", fmt(rep.defect_end)},
               {"max_defect", fmt(rep.max_defect)},
               {"scale", fmt(rep.scale)},
               {"relative_defect_end", fmt(rep.relative_defect_end())}};
    for (std::size_t k = 0; k < rep.warnings.size(); ++k) res["warning" + std::to_string(k)] = rep.warnings[k];
    write_run({get(p, "out"), "index2"}, p, res, csv.str(), "index-2 energy balance");
    print_results(res);
    return 0;
}

int run_convergence_cmd(const Params& p) {
    const auto cfg = oscillator_config(p);
    std::vector<MethodTag> methods;
    for (const auto& m : split(get(p, "methods"), ',')) methods.push_back(method_of(m));
    std::vector<double> taus;
    for (const auto& t : split(get(p, "taus"), ',')) {
        const auto v = ebfc::detail::parse_number(t);
        if (!v || !(*v > 0.0)) throw ParseError("bad time step '" + t + "'");
        taus.push_back(*v);
    }
    const auto res = run_convergence(cfg, methods, taus);
    std::ostringstream csv;
    csv.precision(17);
    csv << "method,tau,eps_z,eps_H,saturated\n";
    for (const auto& r : res.rows)
        csv << to_string(r.method) << ',' << r.tau << ',' << r.eps_z << ',' << r.eps_H << ',' << (r.saturated ? 1 : 0)
            << '\n';
    std::ostringstream fits;
    fits.precision(17);
    fits << "method,slope,points\n";
    Params out{{"L", fmt(res.L)}, {"t_end_used", fmt(res.t_end)}};
    for (const auto& f : res.fits) {
        fits << to_string(f.method) << ',' << f.slope << ',' << f.points << '\n';
        out["slope." + std::string(to_string(f.method))] = fmt(f.slope);
    }
    const fs::path dir = get(p, "out");
    write_file_atomic(dir / "convergence.csv", csv.str());
    write_file_atomic(dir / "convergence_fits.csv", fits.str());
    std::ostringstream gp;
    gp << "set datafile separator ','\nset logscale xy\nset key left top\n"
       << "set xlabel 'tau [s]'\nset ylabel 'eps_z'\n"
       << "plot for [m in '";
    for (std::size_t k = 0; k < methods.size(); ++k) gp << (k ? " " : "") << to_string(methods[k]);
    gp << "'] 'convergence.csv' using (strcol(1) eq m ? $2 : 1/0):3 with linespoints title m\n";
    write_file_atomic(dir / "convergence.gp", gp.str());
    write_file_atomic(dir / "convergence.manifest", manifest_text(p, out));
    std::cout << csv.str();
    print_results(out);
    return 0;
}

int run_simulate_cmd(const Params& p) {
    const fs::path path = get(p, "netlist");
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open netlist " + path.string());
    std::stringstream text;
    text << is.rdbuf();
    const auto nl = parse_netlist(text.str());
    const auto inc = build_incidence(nl);
    const auto circuit = mna_system(inc);

    std::vector<std::string> order;
    std::vector<EnergySystem> conductors;
    std::vector<FieldKind> kinds;
    for (const auto& m : nl.models) {
        const bool used = std::any_of(inc.field_ports.begin(), inc.field_ports.end(),
                                      [&](const FieldPortSlot& s) { return s.model == m.name; });
        if (!used) continue;
        fs::path mp = m.path;
        if (mp.is_relative()) mp = path.parent_path() / mp;
        const auto model = import_conductor(mp);
        order.push_back(m.name);
        conductors.push_back(conductor_system(model, m.name));
        kinds.push_back(model.index() == 0 ? FieldKind::stranded : model.index() == 1 ? FieldKind::solid : FieldKind::foil);
    }
    const auto cs = couple(circuit, conductors, kinds, bind_ports(inc, order));
    const auto u = coupled_inputs(cs, inc.source_inputs());

    const double tau = p.count("tau") ? number(p, "tau") : nl.tau.value_or(0.0);
    const double t_end = p.count("t_end") ? number(p, "t_end") : nl.t_end.value_or(0.0);
    if (!(tau > 0.0) || !(t_end > 0.0)) throw ParseError("no time grid: give --tau/--tend or a .tran directive");
    const auto method = method_of(p.count("method") ? get(p, "method") : nl.method.value_or("trapezoidal"));
    Params resolved = p;
    resolved["tau"] = fmt(tau);
    resolved["t_end"] = fmt(t_end);
    resolved["method"] = to_string(method);

    // Start at rest: states with storage stay at zero, the rest (potentials of
    // nodes without capacitance, algebraic currents) follow the sources at t0.
    const auto& part = cs.system.partition;
    std::vector<bool> fixed(static_cast<std::size_t>(cs.system.n()), false);
    for (Index i = 0; i < part.n1; ++i) fixed[static_cast<std::size_t>(i)] = true;
    for (Index j = 0; j < cs.system.E.outerSize(); ++j)
        for (SpMat::InnerIterator it(cs.system.E, j); it; ++it)
            if (it.value() != 0.0) fixed[static_cast<std::size_t>(part.n1 + j)] = true;
    const auto init = consistent_init(cs.system, Vec::Zero(cs.system.n()), u(0.0), fixed);
    const auto tr = simulate(cs.system, init.z, u, tau, t_end, Method::make(method));

    // Circuit port outputs are B^T w = (-A_I^T phi, -j_V); report the branch
    // voltage of each current-driven slot and the current of each
    // voltage-driven slot with the sign flipped back.
    std::ostringstream csv;
    csv.precision(17);
    const auto& sys = cs.system;
    csv << "t,H,D_cum,E_in";
    for (Index i = 0; i < sys.n(); ++i) csv << ',' << sys.state_name(i);
    const Index off = cs.layout.circuit_port_offset;
    const Index bI = inc.A_I.cols();
    for (Index k = 0; k < inc.m(); ++k)
        csv << ',' << (k < bI ? "v:" + inc.names_I[static_cast<std::size_t>(k)]
                              : "i:" + inc.names_V[static_cast<std::size_t>(k - bI)]);
    csv << '\n';
    for (std::size_t k = 0; k < tr.size(); ++k) {
        csv << tr.times[k] << ',' << tr.hamiltonians[k] << ',' << tr.dissipated_cum[k] << ',' << tr.supplied_cum[k];
        for (Index i = 0; i < sys.n(); ++i) csv << ',' << tr.states[k](i);
        for (Index j = 0; j < inc.m(); ++j) csv << ',' << -tr.outputs[k](off + j);
        csv << '\n';
    }
    const auto audit = energy_audit(sys, tr);
    Params res{{"states", std::to_string(sys.n())},
               {"ports", std::to_string(sys.m())},
               {"H_end", fmt(tr.hamiltonians.back())},
               {"D_cum_end", fmt(tr.dissipated_cum.back())},
               {"E_in_end", fmt(tr.supplied_cum.back())},
               {"max_step_balance_defect", fmt(audit.max_abs_defect)}};
    write_run({get(p, "out"), "simulate"}, resolved, res, csv.str(), path.filename().string());
    print_results(res);
    return 0;
}

int run_validate_cmd(const Params& p) {
    const auto sys = load(get(p, "system"));
    Tolerances tol;
    const auto rep = validate(sys, tol);
    std::cout << rep.summary() << '\n';
    if (!rep.ok) throw StructureError("system violates its structural invariants");
    return 0;
}

int run_export_cmd(const Params& p) {
    auto g = fem::read_geometry(get(p, "geometry"));
    if (const double h = number(p, "mesh_h"); h > 0.0) g.h = h;
    const auto mesh = fem::build_rect_mesh(g);
    const auto f = fem::assemble_field(mesh, g.material_map());
    const fs::path out = get(p, "out");
    fs::create_directories(out);
    {
        std::ostringstream os;
        fem::write_mesh(os, mesh);
        write_file_atomic(out / "mesh.txt", os.str());
        std::ostringstream dm;
        for (const auto n : f.dofs.free) dm << n << '\n';
        write_file_atomic(out / "dofs.txt", dm.str());
    }
    mm::write_file(out / "M_sigma.mtx", f.M_sigma);
    mm::write_file(out / "K_nu.mtx", f.K_nu);
    const bool regular = fem::check_pencil(f.M_sigma, f.K_nu, static_cast<unsigned>(number(p, "seed")));
    Params res{{"nodes", std::to_string(mesh.num_nodes())},
               {"triangles", std::to_string(mesh.triangles.size())},
               {"free_dofs", std::to_string(f.dofs.size())},
               {"pencil_regular", regular ? "true" : "false"}};
    for (const auto& [region, turns] : g.turns) {
        const Vec X = f.dofs.reduce(fem::assemble_stranded_column(mesh, region, turns));
        StrandedModel s{f.M_sigma, f.K_nu, Mat(X), Mat::Zero(1, 1)};
        export_conductor(s, out / region);
        res["L." + region] = fmt(lumped_inductance(f.K_nu, s.X)(0, 0));
    }
    write_file_atomic(out / "export.manifest", manifest_text(p, res));
    print_results(res);
    if (!regular) throw NumericalError("pencil lambda M_sigma + K_nu is singular");
    return 0;
}

int dispatch(const Params& p) {
    const auto cmd = get(p, "command");
    if (cmd == "oscillator") return run_oscillator_cmd(p);
    if (cmd == "index2") return run_index2_cmd(p);
    if (cmd == "convergence") return run_convergence_cmd(p);
    if (cmd == "simulate") return run_simulate_cmd(p);
    if (cmd == "validate") return run_validate_cmd(p);
    if (cmd == "export-matrices") return run_export_cmd(p);
    throw ParseError("unknown command '" + cmd + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Energy-based field-circuit simulation"};
    app.require_subcommand(0, 1);

    std::string from_manifest;
    std::string rerun_out;
    app.add_option("--from-manifest", from_manifest, "Re-run from a run manifest");
    app.add_option("--out", rerun_out, "with --from-manifest: write into this directory instead");

    std::string method = "trapezoidal", tau = "0.1u", tend = "50u", mesh_h = "0", out = "out", seed = "12345";
    std::string conductor = "stranded", geometry = "builtin", C = "100u", v0 = "1", i0 = "0";
    std::string amplitude = "1", frequency = "50k";
    std::string methods = "euler,trapezoidal,bdf2,gauss4,radau5", taus = "0.8u,0.4u,0.2u,0.1u,0.05u";
    bool conductive_core = false, winding_r = false;
    std::string netlist, system_dir, geometry_file;

    auto common = [&](CLI::App* s) {
        s->add_option("--method", method, "implicit_euler|midpoint|trapezoidal|bdf2|gauss4|radau5");
        s->add_option("--tau", tau, "time step [s], suffixes allowed (0.1u)");
        s->add_option("--tend", tend, "end time [s]");
        s->add_option("--out", out, "output directory");
        s->add_option("--seed", seed, "seed for randomized checks");
    };
    auto oscillator_opts = [&](CLI::App* s) {
        common(s);
        s->add_option("--mesh-h", mesh_h, "mesh size [m], 0 keeps the geometry value");
        s->add_option("--conductor", conductor, "stranded|solid|foil");
        s->add_flag("--conductive-core", conductive_core, "core conductivity 100 S/m");
        s->add_flag("--winding-resistance", winding_r, "stranded: include the strand DC resistance");
        s->add_option("--geometry", geometry, "geometry file (mm)");
        s->add_option("--C", C, "capacitance [F]");
        s->add_option("--v0", v0, "initial capacitor voltage [V]");
        s->add_option("--i0", i0, "initial coil current [A]");
    };

    auto* sim = app.add_subcommand("simulate", "Simulate a netlist with optional field-model ports");
    sim->add_option("netlist", netlist, "netlist file")->required();
    common(sim);
    bool sim_method = false, sim_tau = false, sim_tend = false;
    sim->get_option("--method")->each([&](const std::string&) { sim_method = true; });
    sim->get_option("--tau")->each([&](const std::string&) { sim_tau = true; });
    sim->get_option("--tend")->each([&](const std::string&) { sim_tend = true; });

    auto* osc = app.add_subcommand("oscillator", "LC oscillator with a field-modelled coil");
    oscillator_opts(osc);
    auto* idx2 = app.add_subcommand("index2", "Oscillator driven by a parallel voltage source");
    oscillator_opts(idx2);
    idx2->add_option("--amplitude", amplitude, "source amplitude [V]");
    idx2->add_option("--frequency", frequency, "source frequency [Hz]");
    auto* conv = app.add_subcommand("convergence", "Convergence study on the lossless oscillator");
    oscillator_opts(conv);
    conv->add_option("--methods", methods, "comma-separated method list");
    conv->add_option("--taus", taus, "comma-separated time steps");
    auto* val = app.add_subcommand("validate", "Check the structure of a saved system directory");
    val->add_option("system", system_dir, "directory with E/J/R/B/M1/M2/S.mtx and partition.txt")->required();
    auto* exp = app.add_subcommand("export-matrices", "Assemble field matrices from a geometry file");
    exp->add_option("geometry", geometry_file, "geometry file (mm)")->required();
    exp->add_option("out-dir", out, "output directory")->required();
    exp->add_option("--mesh-h", mesh_h, "mesh size [m], 0 keeps the geometry value");
    exp->add_option("--seed", seed, "seed for the pencil check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        Params p;
        if (!from_manifest.empty()) {
            p = read_params(from_manifest);
            if (!rerun_out.empty()) p["out"] = rerun_out;
        } else if (app.got_subcommand(sim)) {
            p = {{"command", "simulate"}, {"netlist", netlist}, {"out", out}, {"seed", seed}};
            if (sim_method) p["method"] = method;
            if (sim_tau) p["tau"] = tau;
            if (sim_tend) p["t_end"] = tend;
        } else if (app.got_subcommand(osc) || app.got_subcommand(idx2) || app.got_subcommand(conv)) {
            p = {{"method", method},   {"tau", tau},         {"t_end", tend},
                 {"mesh_h", mesh_h},   {"out", out},         {"seed", seed},
                 {"conductor", conductor},
                 {"conductive_core", conductive_core ? "true" : "false"},
                 {"winding_resistance", winding_r ? "true" : "false"},
                 {"geometry", geometry}, {"C", C},           {"v0", v0},
                 {"i0", i0}};
            if (app.got_subcommand(osc)) p["command"] = "oscillator";
            if (app.got_subcommand(idx2)) {
                p["command"] = "index2";
                p["amplitude"] = amplitude;
                p["frequency"] = frequency;
            }
            if (app.got_subcommand(conv)) {
                p["command"] = "convergence";
                p["methods"] = methods;
                p["taus"] = taus;
            }
        } else if (app.got_subcommand(val)) {
            p = {{"command", "validate"}, {"system", system_dir}};
        } else if (app.got_subcommand(exp)) {
            p = {{"command", "export-matrices"}, {"geometry", geometry_file}, {"out", out},
                 {"mesh_h", mesh_h},             {"seed", seed}};
        } else {
            std::cerr << app.help();
            return 2;
        }
        return dispatch(p);
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const StructureError& e) {
        std::cerr << "structure error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
