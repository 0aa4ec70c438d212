#pragma once

#include "ebfc/conductors.hpp"
#include "ebfc/fem_axi.hpp"

namespace ebfc::test {

// Small axisymmetric problem: a conductive bar away from the axis, a coil
// next to it and a conductive core on the axis.
struct SmallProblem {
    fem::Mesh mesh;
    fem::FieldMatrices field;
};

inline SmallProblem small_problem(double sigma_bar, double sigma_core) {
    const fem::Rect dom{"air", 0.0, 0.02, 0.0, 0.02};
    const std::vector<fem::Rect> rects{{"core", 0.0, 0.004, 0.006, 0.014},
                                       {"bar", 0.006, 0.01, 0.006, 0.014},
                                       {"coil", 0.012, 0.014, 0.004, 0.016}};
    SmallProblem p;
    p.mesh = fem::build_rect_mesh(dom, rects, 0.002);
    fem::MaterialMap mat;
    mat.set("air", {});
    mat.set("core", {50.0, sigma_core});
    mat.set("bar", {1.0, sigma_bar});
    mat.set("coil", {1.0, 0.0});
    p.field = fem::assemble_field(p.mesh, mat);
    return p;
}

inline SolidModel bar_solid(const SmallProblem& p) {
    const SpMat M_full = fem::assemble_M_sigma(p.mesh, p.field.materials);
    const auto col = fem::assemble_solid_column(p.mesh, "bar", p.field.materials, M_full);
    return SolidModel::make(p.field.M_sigma, p.field.K_nu, Mat(p.field.dofs.reduce(col.chi)));
}

inline StrandedModel coil_stranded(const SmallProblem& p, double turns) {
    const Vec X = p.field.dofs.reduce(fem::assemble_stranded_column(p.mesh, "coil", turns));
    return {p.field.M_sigma, p.field.K_nu, Mat(X), Mat::Zero(1, 1)};
}

}  // namespace ebfc::test
