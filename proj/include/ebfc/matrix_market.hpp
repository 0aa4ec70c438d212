#pragma once

// Matrix Market reader/writer. Writes `coordinate real general` with
// 1-based indices; reads coordinate (general or symmetric) and dense array
// files with real or integer fields.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ebfc/errors.hpp"
#include "ebfc/linalg.hpp"

namespace ebfc::mm {

inline void write(std::ostream& os, const SpMat& a) {
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
    os << std::setprecision(17);
    for (Index j = 0; j < a.outerSize(); ++j)
        for (SpMat::InnerIterator it(a, j); it; ++it)
            os << (it.row() + 1) << ' ' << (j + 1) << ' ' << it.value() << '\n';
}

inline std::string to_string(const SpMat& a) {
    std::ostringstream os;
    write(os, a);
    return os.str();
}

inline SpMat read(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw ParseError("empty Matrix Market stream");
    ++lineno;
    std::istringstream hs(line);
    std::string banner, object, format, field, symmetry;
    hs >> banner >> object >> format >> field >> symmetry;
    if (banner != "%%MatrixMarket" || object != "matrix")
        throw ParseError("missing %%MatrixMarket matrix header", lineno);
    if (format != "coordinate" && format != "array")
        throw ParseError("unsupported Matrix Market format '" + format + "'", lineno);
    if (field != "real" && field != "integer" && field != "double")
        throw ParseError("unsupported Matrix Market field '" + field + "'", lineno);
    if (symmetry != "general" && symmetry != "symmetric")
        throw ParseError("unsupported Matrix Market symmetry '" + symmetry + "'", lineno);
    const bool symmetric = symmetry == "symmetric";

    auto next_data_line = [&](std::string& out) {
        while (std::getline(is, out)) {
            ++lineno;
            const auto p = out.find_first_not_of(" \t\r");
            if (p == std::string::npos || out[p] == '%') continue;
            return true;
        }
        return false;
    };

    if (!next_data_line(line)) throw ParseError("missing size line", lineno);
    std::istringstream ss(line);
    long rows = 0, cols = 0, nnz = 0;
    if (format == "coordinate") {
        if (!(ss >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
            throw ParseError("malformed size line", lineno);
    } else {
        if (!(ss >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("malformed size line", lineno);
        nnz = rows * cols;
    }

    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(nnz));
    for (long k = 0; k < nnz; ++k) {
        if (!next_data_line(line)) throw ParseError("unexpected end of data", lineno);
        std::istringstream es(line);
        if (format == "coordinate") {
            long i = 0, j = 0;
            double v = 0.0;
            if (!(es >> i >> j >> v)) throw ParseError("malformed entry", lineno);
            if (i < 1 || i > rows || j < 1 || j > cols) throw ParseError("index out of range", lineno);
            t.emplace_back(i - 1, j - 1, v);
            if (symmetric && i != j) t.emplace_back(j - 1, i - 1, v);
        } else {
            double v = 0.0;
            if (!(es >> v)) throw ParseError("malformed entry", lineno);
            const long i = k % rows, j = k / rows;
            if (v != 0.0) t.emplace_back(i, j, v);
        }
    }
    SpMat a(rows, cols);
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

inline SpMat read_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open " + path.string());
    try {
        return read(is);
    } catch (const ParseError& e) {
        throw ParseError(path.filename().string() + ": " + e.bare_message(), e.line(), e.column());
    }
}

inline void write_file(const std::filesystem::path& path, const SpMat& a) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write(os, a);
}

inline SpMat column(const Vec& v) { return to_sparse(Mat(v)); }

}  // namespace ebfc::mm
