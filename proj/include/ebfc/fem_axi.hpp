#pragma once

// Axisymmetric nodal finite elements for the azimuthal vector potential A_phi
// on a structured triangulation of tagged rectangles in the (r, z) plane.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseQR>
#include <Eigen/OrderingMethods>

#include "ebfc/errors.hpp"
#include "ebfc/linalg.hpp"

namespace ebfc::fem {

inline constexpr double mu0 = 4.0e-7 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Geometry

struct Rect {
    std::string region;
    double r0 = 0, r1 = 0, z0 = 0, z1 = 0;

    bool contains(double r, double z) const { return r > r0 && r < r1 && z > z0 && z < z1; }
    double area() const { return (r1 - r0) * (z1 - z0); }
};

struct Material {
    double mu_r = 1.0;
    double sigma = 0.0;
};

/// Reluctivity and conductivity per region.
struct MaterialMap {
    std::map<std::string, double> nu;
    std::map<std::string, double> sigma;

    void set(const std::string& region, const Material& m) {
        nu[region] = 1.0 / (mu0 * m.mu_r);
        sigma[region] = m.sigma;
    }
    double nu_of(const std::string& region) const {
        const auto it = nu.find(region);
        if (it == nu.end()) throw StructureError("no reluctivity for region '" + region + "'");
        return it->second;
    }
    double sigma_of(const std::string& region) const {
        const auto it = sigma.find(region);
        return it == sigma.end() ? 0.0 : it->second;
    }
};

/// Outer domain, tagged rectangles (regions not covered are `air`), target
/// element size, winding turn counts and materials. Lengths in metres.
struct Geometry {
    Rect domain{"air", 0, 0, 0, 0};
    std::vector<Rect> rects;
    double h = 0.0;
    std::map<std::string, double> turns;
    std::map<std::string, Material> materials;

    MaterialMap material_map() const {
        MaterialMap m;
        m.set("air", Material{});
        for (const auto& [region, mat] : materials) m.set(region, mat);
        return m;
    }
    const Rect& rect(const std::string& region) const {
        for (const auto& r : rects)
            if (r.region == region) return r;
        throw StructureError("geometry has no region '" + region + "'");
    }
};

/// Geometry file, lengths in mm:
///   domain r0 r1 z0 z1
///   rect <region> r0 r1 z0 z1
///   h <size>
///   turns <region> <N>
///   material <region> mu_r <v> sigma <v>
/// `#` starts a comment.
inline Geometry parse_geometry(std::istream& is) {
    Geometry g;
    bool have_domain = false;
    std::string line;
    std::size_t lineno = 0;
    auto num = [&](std::istringstream& ss, const char* what) {
        double v = 0.0;
        if (!(ss >> v)) throw ParseError(std::string("expected number for ") + what, lineno);
        return v;
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto p = line.find('#'); p != std::string::npos) line.erase(p);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "domain") {
            g.domain.r0 = num(ss, "r0") * 1e-3;
            g.domain.r1 = num(ss, "r1") * 1e-3;
            g.domain.z0 = num(ss, "z0") * 1e-3;
            g.domain.z1 = num(ss, "z1") * 1e-3;
            have_domain = true;
        } else if (key == "rect") {
            Rect r;
            if (!(ss >> r.region)) throw ParseError("rect needs a region name", lineno);
            r.r0 = num(ss, "r0") * 1e-3;
            r.r1 = num(ss, "r1") * 1e-3;
            r.z0 = num(ss, "z0") * 1e-3;
            r.z1 = num(ss, "z1") * 1e-3;
            g.rects.push_back(r);
        } else if (key == "h") {
            g.h = num(ss, "h") * 1e-3;
        } else if (key == "turns") {
            std::string region;
            if (!(ss >> region)) throw ParseError("turns needs a region name", lineno);
            g.turns[region] = num(ss, "turns");
        } else if (key == "material") {
            std::string region, k;
            if (!(ss >> region)) throw ParseError("material needs a region name", lineno);
            Material m;
            while (ss >> k) {
                if (k == "mu_r") m.mu_r = num(ss, "mu_r");
                else if (k == "sigma") m.sigma = num(ss, "sigma");
                else throw ParseError("unknown material key '" + k + "'", lineno);
            }
            g.materials[region] = m;
        } else {
            throw ParseError("unknown geometry keyword '" + key + "'", lineno);
        }
        std::string extra;
        if (ss.clear(), ss >> extra) throw ParseError("trailing token '" + extra + "'", lineno);
    }
    if (!have_domain) throw ParseError("geometry file lacks a domain line");
    return g;
}

inline Geometry read_geometry(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open geometry file " + path.string());
    return parse_geometry(is);
}

// ---------------------------------------------------------------------------
// Mesh

enum class NodeTag { interior, outer, axis };

struct Triangle {
    std::array<Index, 3> v{};
    int region = 0;
};

struct Mesh {
    std::vector<std::array<double, 2>> nodes;  ///< (r, z) in metres
    std::vector<NodeTag> tags;
    std::vector<Triangle> triangles;
    std::vector<std::string> region_names;

    Index num_nodes() const { return static_cast<Index>(nodes.size()); }

    int region_id(const std::string& name) const {
        for (std::size_t k = 0; k < region_names.size(); ++k)
            if (region_names[k] == name) return static_cast<int>(k);
        return -1;
    }
    std::size_t count_in(const std::string& region) const {
        const int id = region_id(region);
        return static_cast<std::size_t>(std::count_if(triangles.begin(), triangles.end(),
                                                      [id](const Triangle& t) { return t.region == id; }));
    }
    double signed_area(const Triangle& t) const {
        const auto& a = nodes[static_cast<std::size_t>(t.v[0])];
        const auto& b = nodes[static_cast<std::size_t>(t.v[1])];
        const auto& c = nodes[static_cast<std::size_t>(t.v[2])];
        return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    }
};

/// Empty string when valid, otherwise the first problem found.
inline std::string mesh_problem(const Mesh& m) {
    if (m.tags.size() != m.nodes.size()) return "tag count differs from node count";
    for (std::size_t i = 0; i < m.nodes.size(); ++i) {
        if (m.nodes[i][0] < 0.0) return "node " + std::to_string(i) + " has r < 0";
        if (m.nodes[i][0] == 0.0 && m.tags[i] != NodeTag::axis)
            return "node " + std::to_string(i) + " lies on the axis but is not tagged axis";
    }
    for (std::size_t k = 0; k < m.triangles.size(); ++k) {
        const auto& t = m.triangles[k];
        for (auto v : t.v)
            if (v < 0 || v >= m.num_nodes()) return "triangle " + std::to_string(k) + " references a missing node";
        if (t.region < 0 || static_cast<std::size_t>(t.region) >= m.region_names.size())
            return "triangle " + std::to_string(k) + " has an unknown region";
        if (!(m.signed_area(t) > 0.0)) return "triangle " + std::to_string(k) + " is not positively oriented";
    }
    return {};
}

namespace detail {
inline std::vector<double> grid_line(std::vector<double> breaks, double h) {
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }),
                 breaks.end());
    std::vector<double> out{breaks.front()};
    for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
        const double len = breaks[k + 1] - breaks[k];
        const auto pieces = std::max<long>(1, static_cast<long>(std::ceil(len / h - 1e-9)));
        for (long p = 1; p <= pieces; ++p)
            out.push_back(p == pieces ? breaks[k + 1] : breaks[k] + len * static_cast<double>(p) / static_cast<double>(pieces));
    }
    return out;
}
}  // namespace detail

/// Structured mesh: grid lines through every rectangle edge, each interval
/// split into ceil(length / h) pieces, each cell split into two triangles.
inline Mesh build_rect_mesh(const Rect& domain, const std::vector<Rect>& rects, double h) {
    if (!(h > 0.0)) throw StructureError("mesh size h must be positive");
    if (!(domain.r1 > domain.r0) || !(domain.z1 > domain.z0)) throw StructureError("empty domain rectangle");
    if (domain.r0 < 0.0) throw StructureError("domain extends to r < 0");
    const double eps = 1e-12 * std::max(domain.r1 - domain.r0, domain.z1 - domain.z0);
    double min_edge = std::min(domain.r1 - domain.r0, domain.z1 - domain.z0);
    for (std::size_t a = 0; a < rects.size(); ++a) {
        const auto& r = rects[a];
        if (!(r.r1 > r.r0) || !(r.z1 > r.z0)) throw StructureError("rectangle '" + r.region + "' is empty");
        if (r.r0 < domain.r0 - eps || r.r1 > domain.r1 + eps || r.z0 < domain.z0 - eps || r.z1 > domain.z1 + eps)
            throw StructureError("rectangle '" + r.region + "' leaves the domain");
        if (r.region == "air") throw StructureError("region name 'air' is reserved for the background");
        min_edge = std::min({min_edge, r.r1 - r.r0, r.z1 - r.z0});
        for (std::size_t b = 0; b < a; ++b) {
            const auto& q = rects[b];
            if (r.r0 < q.r1 - eps && q.r0 < r.r1 - eps && r.z0 < q.z1 - eps && q.z0 < r.z1 - eps)
                throw StructureError("rectangles '" + q.region + "' and '" + r.region + "' overlap");
        }
    }
    if (h > min_edge * (1.0 + 1e-12))
        throw StructureError("mesh size h exceeds the smallest rectangle edge");

    std::vector<double> rb{domain.r0, domain.r1}, zb{domain.z0, domain.z1};
    for (const auto& r : rects) {
        rb.insert(rb.end(), {r.r0, r.r1});
        zb.insert(zb.end(), {r.z0, r.z1});
    }
    const auto rs = detail::grid_line(rb, h);
    const auto zs = detail::grid_line(zb, h);
    const auto nr = static_cast<Index>(rs.size()), nz = static_cast<Index>(zs.size());

    Mesh m;
    m.region_names.push_back("air");
    for (const auto& r : rects)
        if (m.region_id(r.region) < 0) m.region_names.push_back(r.region);
    auto id = [nr](Index i, Index j) { return j * nr + i; };
    for (Index j = 0; j < nz; ++j)
        for (Index i = 0; i < nr; ++i) {
            const double r = rs[static_cast<std::size_t>(i)], z = zs[static_cast<std::size_t>(j)];
            m.nodes.push_back({r, z});
            NodeTag tag = NodeTag::interior;
            if (r == 0.0) tag = NodeTag::axis;
            else if (i == nr - 1 || j == 0 || j == nz - 1 || (i == 0 && domain.r0 > 0.0)) tag = NodeTag::outer;
            m.tags.push_back(tag);
        }
    for (Index j = 0; j + 1 < nz; ++j)
        for (Index i = 0; i + 1 < nr; ++i) {
            const double rc = 0.5 * (rs[static_cast<std::size_t>(i)] + rs[static_cast<std::size_t>(i + 1)]);
            const double zc = 0.5 * (zs[static_cast<std::size_t>(j)] + zs[static_cast<std::size_t>(j + 1)]);
            int region = 0;
            for (const auto& r : rects)
                if (r.contains(rc, zc)) region = m.region_id(r.region);
            const Index a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
            m.triangles.push_back({{a, b, c}, region});
            m.triangles.push_back({{a, c, d}, region});
        }
    return m;
}

inline Mesh build_rect_mesh(const Geometry& g) { return build_rect_mesh(g.domain, g.rects, g.h); }

inline const char* to_string(NodeTag t) {
    switch (t) {
        case NodeTag::interior: return "interior";
        case NodeTag::outer: return "outer";
        case NodeTag::axis: return "axis";
    }
    return "?";
}

/// `node r z tag` and `tri a b c region` records, 0-based node indices.
inline void write_mesh(std::ostream& os, const Mesh& m) {
    os.precision(17);
    for (std::size_t i = 0; i < m.nodes.size(); ++i)
        os << "node " << m.nodes[i][0] << ' ' << m.nodes[i][1] << ' ' << to_string(m.tags[i]) << '\n';
    for (const auto& t : m.triangles)
        os << "tri " << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' '
           << m.region_names[static_cast<std::size_t>(t.region)] << '\n';
}

inline Mesh read_mesh(std::istream& is) {
    Mesh m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto p = line.find('#'); p != std::string::npos) line.erase(p);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key)) continue;
        if (key == "node") {
            double r = 0, z = 0;
            std::string tag;
            if (!(ss >> r >> z >> tag)) throw ParseError("malformed node record", lineno);
            NodeTag t;
            if (tag == "interior") t = NodeTag::interior;
            else if (tag == "outer") t = NodeTag::outer;
            else if (tag == "axis") t = NodeTag::axis;
            else throw ParseError("unknown node tag '" + tag + "'", lineno);
            m.nodes.push_back({r, z});
            m.tags.push_back(t);
        } else if (key == "tri") {
            Triangle t;
            std::string region;
            if (!(ss >> t.v[0] >> t.v[1] >> t.v[2] >> region)) throw ParseError("malformed tri record", lineno);
            t.region = m.region_id(region);
            if (t.region < 0) {
                m.region_names.push_back(region);
                t.region = static_cast<int>(m.region_names.size()) - 1;
            }
            m.triangles.push_back(t);
        } else {
            throw ParseError("unknown mesh record '" + key + "'", lineno);
        }
    }
    if (const auto problem = mesh_problem(m); !problem.empty()) throw StructureError("invalid mesh: " + problem);
    return m;
}

// ---------------------------------------------------------------------------
// Quadrature on triangles (barycentric points, weights summing to 1)

struct QuadRule {
    std::vector<std::array<double, 3>> points;
    std::vector<double> weights;
};

/// Interior 3-point rule, exact for quadratics.
inline QuadRule rule3() {
    constexpr double a = 2.0 / 3.0, b = 1.0 / 6.0;
    return {{{a, b, b}, {b, a, b}, {b, b, a}}, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}};
}

/// 7-point rule, exact for quintics.
inline QuadRule rule7() {
    const double s = std::sqrt(15.0);
    const double a1 = (6.0 - s) / 21.0, b1 = 1.0 - 2.0 * a1;
    const double a2 = (6.0 + s) / 21.0, b2 = 1.0 - 2.0 * a2;
    const double w1 = (155.0 - s) / 1200.0, w2 = (155.0 + s) / 1200.0;
    return {{{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, {a1, a1, b1}, {a1, b1, a1}, {b1, a1, a1}, {a2, a2, b2}, {a2, b2, a2},
             {b2, a2, a2}},
            {9.0 / 40.0, w1, w1, w1, w2, w2, w2}};
}

enum class Quadrature { three_point, seven_point };

inline QuadRule rule(Quadrature q) { return q == Quadrature::three_point ? rule3() : rule7(); }

using ElementMatrix = Eigen::Matrix3d;
using Vertices = std::array<std::array<double, 2>, 3>;

namespace detail {
struct Shape {
    double area = 0.0;
    Eigen::Vector3d dr, dz;  ///< constant gradients of the three hat functions
};
inline Shape shape(const Vertices& p) {
    Shape s;
    const double det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    s.area = 0.5 * det;
    if (!(s.area > 0.0)) throw StructureError("degenerate or negatively oriented triangle");
    for (int i = 0; i < 3; ++i) {
        const auto& b = p[static_cast<std::size_t>((i + 1) % 3)];
        const auto& c = p[static_cast<std::size_t>((i + 2) % 3)];
        s.dr(i) = (b[1] - c[1]) / det;
        s.dz(i) = (c[0] - b[0]) / det;
    }
    return s;
}
}  // namespace detail

/// 2 pi * integral of nu [dz wi dz wj + (dr wi + wi/r)(dr wj + wj/r)] r over one triangle.
inline ElementMatrix element_K(const Vertices& p, double nu, const QuadRule& q = rule7()) {
    const auto s = detail::shape(p);
    ElementMatrix k = ElementMatrix::Zero();
    for (std::size_t g = 0; g < q.weights.size(); ++g) {
        const auto& l = q.points[g];
        const double r = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
        if (!(r > 0.0)) throw StructureError("quadrature point on or beyond the axis");
        const Eigen::Vector3d w(l[0], l[1], l[2]);
        const Eigen::Vector3d curl_r = s.dr + w / r;
        k += (q.weights[g] * r) * (s.dz * s.dz.transpose() + curl_r * curl_r.transpose());
    }
    return (2.0 * std::numbers::pi * nu * s.area) * k;
}

/// 2 pi * integral of sigma wi wj r over one triangle.
inline ElementMatrix element_M(const Vertices& p, double sigma, const QuadRule& q = rule7()) {
    const auto s = detail::shape(p);
    ElementMatrix m = ElementMatrix::Zero();
    for (std::size_t g = 0; g < q.weights.size(); ++g) {
        const auto& l = q.points[g];
        const double r = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
        const Eigen::Vector3d w(l[0], l[1], l[2]);
        m += (q.weights[g] * r) * (w * w.transpose());
    }
    return (2.0 * std::numbers::pi * sigma * s.area) * m;
}

/// 2 pi * integral of wi r over one triangle.
inline Eigen::Vector3d element_load(const Vertices& p, const QuadRule& q = rule7()) {
    const auto s = detail::shape(p);
    Eigen::Vector3d f = Eigen::Vector3d::Zero();
    for (std::size_t g = 0; g < q.weights.size(); ++g) {
        const auto& l = q.points[g];
        const double r = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
        f += (q.weights[g] * r) * Eigen::Vector3d(l[0], l[1], l[2]);
    }
    return (2.0 * std::numbers::pi * s.area) * f;
}

namespace detail {
inline Vertices vertices(const Mesh& m, const Triangle& t) {
    return {m.nodes[static_cast<std::size_t>(t.v[0])], m.nodes[static_cast<std::size_t>(t.v[1])],
            m.nodes[static_cast<std::size_t>(t.v[2])]};
}

// Serial scatter in triangle order keeps assembly deterministic.
template <class Element>
SpMat assemble(const Mesh& m, Element&& element) {
    std::vector<Triplet> t;
    t.reserve(m.triangles.size() * 9);
    for (const auto& tri : m.triangles) {
        const auto e = element(tri);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (e(i, j) != 0.0) t.emplace_back(tri.v[static_cast<std::size_t>(i)], tri.v[static_cast<std::size_t>(j)], e(i, j));
    }
    SpMat a(m.num_nodes(), m.num_nodes());
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

inline std::string region_name(const Mesh& m, const Triangle& t) {
    return m.region_names[static_cast<std::size_t>(t.region)];
}
}  // namespace detail

inline SpMat assemble_K_nu(const Mesh& m, const MaterialMap& mat, Quadrature quad = Quadrature::seven_point) {
    const auto q = rule(quad);
    return detail::assemble(m, [&](const Triangle& t) {
        const double nu = mat.nu_of(detail::region_name(m, t));
        if (nu == 0.0) return ElementMatrix(ElementMatrix::Zero());
        return element_K(detail::vertices(m, t), nu, q);
    });
}

inline SpMat assemble_M_sigma(const Mesh& m, const MaterialMap& mat, Quadrature quad = Quadrature::seven_point) {
    const auto q = rule(quad);
    for (const auto& [region, s] : mat.sigma)
        if (s < 0.0) throw StructureError("negative conductivity in region '" + region + "'");
    return detail::assemble(m, [&](const Triangle& t) {
        const double sigma = mat.sigma_of(detail::region_name(m, t));
        if (sigma == 0.0) return ElementMatrix(ElementMatrix::Zero());
        return element_M(detail::vertices(m, t), sigma, q);
    });
}

/// Cross-section area and r-weighted area of a region.
inline std::pair<double, double> region_area(const Mesh& m, const std::string& region) {
    const int id = m.region_id(region);
    double area = 0.0, rarea = 0.0;
    for (const auto& t : m.triangles) {
        if (t.region != id) continue;
        const double a = m.signed_area(t);
        const auto p = detail::vertices(m, t);
        area += a;
        rarea += a * (p[0][0] + p[1][0] + p[2][0]) / 3.0;
    }
    return {area, rarea};
}

/// Winding column X_i = 2 pi * integral over the coil of (N_t / S) wi r.
inline Vec assemble_stranded_column(const Mesh& m, const std::string& region, double turns,
                                    Quadrature quad = Quadrature::seven_point) {
    const int id = m.region_id(region);
    if (id < 0 || m.count_in(region) == 0) throw StructureError("stranded region '" + region + "' is empty");
    const double S = region_area(m, region).first;
    const auto q = rule(quad);
    Vec x = Vec::Zero(m.num_nodes());
    for (const auto& t : m.triangles) {
        if (t.region != id) continue;
        const auto f = element_load(detail::vertices(m, t), q);
        for (int i = 0; i < 3; ++i) x(t.v[static_cast<std::size_t>(i)]) += (turns / S) * f(i);
    }
    return x;
}

struct SolidColumn {
    Vec X_sol;  ///< M_sigma * chi_nodal, the coupling column
    Vec chi;    ///< nodal values 1 / (2 pi r_i) on the region, 0 elsewhere
};

/// Voltage distribution of a solid conductor by nodal interpolation of
/// 1 / (2 pi r). `M_sigma` is the full-size conductivity matrix.
inline SolidColumn assemble_solid_column(const Mesh& m, const std::string& region, const MaterialMap& mat,
                                         const SpMat& M_sigma) {
    const int id = m.region_id(region);
    if (id < 0 || m.count_in(region) == 0) throw StructureError("solid region '" + region + "' is empty");
    if (!(mat.sigma_of(region) > 0.0)) throw StructureError("solid region '" + region + "' needs sigma > 0");
    if (M_sigma.rows() != m.num_nodes()) throw StructureError("M_sigma must be assembled at full node count");
    std::vector<char> in(static_cast<std::size_t>(m.num_nodes()), 0);
    for (const auto& t : m.triangles)
        if (t.region == id)
            for (auto v : t.v) in[static_cast<std::size_t>(v)] = 1;
    for (const auto& t : m.triangles) {
        if (t.region == id || mat.sigma_of(detail::region_name(m, t)) == 0.0) continue;
        for (auto v : t.v)
            if (in[static_cast<std::size_t>(v)])
                throw StructureError("solid region '" + region + "' shares nodes with conducting region '" +
                                     detail::region_name(m, t) + "'");
    }
    SolidColumn out;
    out.chi = Vec::Zero(m.num_nodes());
    for (Index i = 0; i < m.num_nodes(); ++i) {
        if (!in[static_cast<std::size_t>(i)]) continue;
        const double r = m.nodes[static_cast<std::size_t>(i)][0];
        if (!(r > 0.0)) throw StructureError("solid region '" + region + "' touches the axis");
        out.chi(i) = 1.0 / (2.0 * std::numbers::pi * r);
    }
    out.X_sol = M_sigma * out.chi;
    return out;
}

// ---------------------------------------------------------------------------
// Dirichlet elimination

struct DofMap {
    std::vector<Index> free;        ///< dof -> node
    std::vector<Index> node_to_dof;  ///< node -> dof, -1 when eliminated

    Index size() const { return static_cast<Index>(free.size()); }
    static DofMap from_mask(const std::vector<bool>& eliminated) {
        DofMap d;
        d.node_to_dof.assign(eliminated.size(), -1);
        for (std::size_t i = 0; i < eliminated.size(); ++i)
            if (!eliminated[i]) {
                d.node_to_dof[i] = static_cast<Index>(d.free.size());
                d.free.push_back(static_cast<Index>(i));
            }
        return d;
    }

    SpMat reduce(const SpMat& a) const { return principal(a, free); }
    Vec reduce(const Vec& v) const {
        Vec out(size());
        for (Index k = 0; k < size(); ++k) out(k) = v(free[static_cast<std::size_t>(k)]);
        return out;
    }
    Mat reduce_rows(const Mat& x) const {
        Mat out(size(), x.cols());
        for (Index k = 0; k < size(); ++k) out.row(k) = x.row(free[static_cast<std::size_t>(k)]);
        return out;
    }
    /// Zero-extension to the full node count.
    Vec expand(const Vec& v) const {
        Vec out = Vec::Zero(static_cast<Index>(node_to_dof.size()));
        for (Index k = 0; k < size(); ++k) out(free[static_cast<std::size_t>(k)]) = v(k);
        return out;
    }
};

/// Eliminates outer-boundary and axis nodes.
inline DofMap dirichlet_dofs(const Mesh& m) {
    std::vector<bool> elim(m.nodes.size());
    for (std::size_t i = 0; i < m.nodes.size(); ++i) elim[i] = m.tags[i] != NodeTag::interior;
    return DofMap::from_mask(elim);
}

// ---------------------------------------------------------------------------
// Pseudo-inverse solve and pencil check

/// Y = M^+ X for symmetric PSD M. Supports up to `dense_limit` rows use a
/// complete orthogonal decomposition (exact minimum-norm solution); larger
/// supports use a sparse LDL^T of the support block. Columns of X must lie in
/// the column space of M.
inline Mat pseudo_solve(const SpMat& M, const Mat& X, double tol = 1e-10, Index dense_limit = 1500) {
    if (M.rows() != M.cols() || X.rows() != M.rows()) throw StructureError("pseudo_solve: shape mismatch");
    Mat Y = Mat::Zero(X.rows(), X.cols());
    const double xnorm = X.norm();
    if (xnorm == 0.0) return Y;
    const auto idx = support(M);
    Mat Xs(static_cast<Index>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) Xs.row(static_cast<Index>(k)) = X.row(idx[k]);
    if (!idx.empty()) {
        const SpMat Ms = principal(M, idx);
        Mat Ys;
        if (static_cast<Index>(idx.size()) <= dense_limit) {
            Eigen::CompleteOrthogonalDecomposition<Mat> cod(to_dense(Ms));
            cod.setThreshold(1e-13);
            Ys = cod.solve(Xs);
        } else {
            Eigen::SimplicialLDLT<SpMat> ldlt(Ms);
            if (ldlt.info() != Eigen::Success) throw NumericalError("pseudo_solve: support block factorization failed");
            Ys = ldlt.solve(Xs);
        }
        for (std::size_t k = 0; k < idx.size(); ++k) Y.row(idx[k]) = Ys.row(static_cast<Index>(k));
    }
    const double res = (Mat(M * Y) - X).norm();
    if (res > tol * xnorm)
        throw NumericalError("pseudo_solve: right-hand side not in the column space of M (relative residual " +
                             std::to_string(res / xnorm) + ")");
    return Y;
}

/// Regularity of the pencil lambda M + K: rank test of M + c K at c = 1 and
/// at one random positive c. Regular if either is nonsingular.
inline bool check_pencil(const SpMat& M, const SpMat& K, unsigned seed = 12345) {
    if (M.rows() != K.rows() || M.cols() != K.cols() || M.rows() != M.cols())
        throw StructureError("check_pencil: shape mismatch");
    if (M.rows() == 0) return true;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.5, 2.0);
    for (const double c : {1.0, dist(rng)}) {
        SpMat a = M + c * K;
        a.makeCompressed();
        Eigen::SparseQR<SpMat, Eigen::COLAMDOrdering<int>> qr;
        qr.setPivotThreshold(1e-12 * std::max(1.0, max_abs(a)));
        qr.compute(a);
        if (qr.info() == Eigen::Success && qr.rank() == a.rows()) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Bundled field matrices for a geometry

struct FieldMatrices {
    Mesh mesh;
    DofMap dofs;
    MaterialMap materials;
    SpMat M_sigma;  ///< reduced
    SpMat K_nu;     ///< reduced
};

inline FieldMatrices assemble_field(const Mesh& mesh, const MaterialMap& mat,
                                    Quadrature quad = Quadrature::seven_point) {
    FieldMatrices f;
    f.mesh = mesh;
    f.dofs = dirichlet_dofs(mesh);
    f.materials = mat;
    f.M_sigma = f.dofs.reduce(assemble_M_sigma(mesh, mat, quad));
    f.K_nu = f.dofs.reduce(assemble_K_nu(mesh, mat, quad));
    return f;
}

}  // namespace ebfc::fem
