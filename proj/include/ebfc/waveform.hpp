#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ebfc/errors.hpp"
#include "ebfc/linalg.hpp"

namespace ebfc {

struct Constant {
    double value = 0.0;
};

/// offset + amplitude * sin(2 pi f t + phase)
struct Sinusoid {
    double offset = 0.0;
    double amplitude = 0.0;
    double frequency = 0.0;  ///< Hz
    double phase = 0.0;      ///< rad
};

/// Piecewise-linear interpolation, held constant outside the table.
struct Tabulated {
    std::vector<double> times;
    std::vector<double> values;
};

class Waveform {
public:
    Waveform() : shape_(Constant{}) {}
    Waveform(Constant c) : shape_(c) {}
    Waveform(Sinusoid s) : shape_(s) {}
    Waveform(Tabulated t) : shape_(std::move(t)) {
        const auto& tab = std::get<Tabulated>(shape_);
        if (tab.times.size() != tab.values.size() || tab.times.empty())
            throw StructureError("tabulated waveform needs equally many (>0) times and values");
        if (!std::is_sorted(tab.times.begin(), tab.times.end()))
            throw StructureError("tabulated waveform times must be nondecreasing");
    }

    double operator()(double t) const {
        return std::visit(
            [t](const auto& w) -> double {
                using W = std::decay_t<decltype(w)>;
                if constexpr (std::is_same_v<W, Constant>) {
                    return w.value;
                } else if constexpr (std::is_same_v<W, Sinusoid>) {
                    return w.offset + w.amplitude * std::sin(2.0 * std::numbers::pi * w.frequency * t + w.phase);
                } else {
                    if (t <= w.times.front()) return w.values.front();
                    if (t >= w.times.back()) return w.values.back();
                    const auto it = std::upper_bound(w.times.begin(), w.times.end(), t);
                    const auto k = static_cast<std::size_t>(it - w.times.begin());
                    const double t0 = w.times[k - 1], t1 = w.times[k];
                    if (t1 == t0) return w.values[k];
                    const double s = (t - t0) / (t1 - t0);
                    return (1.0 - s) * w.values[k - 1] + s * w.values[k];
                }
            },
            shape_);
    }

    bool is_zero() const {
        if (const auto* c = std::get_if<Constant>(&shape_)) return c->value == 0.0;
        if (const auto* s = std::get_if<Sinusoid>(&shape_)) return s->offset == 0.0 && s->amplitude == 0.0;
        return false;
    }

    const auto& shape() const { return shape_; }

    /// Netlist notation: `DC <v>` or `SIN <offset> <amplitude> <freq> [phase]`.
    std::string describe() const {
        std::ostringstream os;
        os.precision(17);
        if (const auto* c = std::get_if<Constant>(&shape_)) {
            os << "DC " << c->value;
        } else if (const auto* s = std::get_if<Sinusoid>(&shape_)) {
            os << "SIN " << s->offset << ' ' << s->amplitude << ' ' << s->frequency;
            if (s->phase != 0.0) os << ' ' << s->phase;
        } else {
            const auto& t = std::get<Tabulated>(shape_);
            os << "TABLE";
            for (std::size_t k = 0; k < t.times.size(); ++k) os << ' ' << t.times[k] << ' ' << t.values[k];
        }
        return os.str();
    }

private:
    std::variant<Constant, Sinusoid, Tabulated> shape_;
};

/// Vector-valued input u(t), one waveform per port.
class InputSignal {
public:
    InputSignal() = default;
    explicit InputSignal(Index m) : channels_(static_cast<std::size_t>(m)) {}
    explicit InputSignal(std::vector<Waveform> channels) : channels_(std::move(channels)) {}

    Index size() const { return static_cast<Index>(channels_.size()); }
    Waveform& operator[](Index k) { return channels_.at(static_cast<std::size_t>(k)); }
    const Waveform& operator[](Index k) const { return channels_.at(static_cast<std::size_t>(k)); }

    Vec operator()(double t) const {
        Vec u(size());
        for (Index k = 0; k < size(); ++k) u(k) = channels_[static_cast<std::size_t>(k)](t);
        return u;
    }

    bool is_zero() const {
        return std::all_of(channels_.begin(), channels_.end(), [](const Waveform& w) { return w.is_zero(); });
    }

private:
    std::vector<Waveform> channels_;
};

}  // namespace ebfc
