#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seqseg/tensor.hpp"

namespace seqseg {

// Central finite-difference oracle. `f` evaluates a scalar objective as
// a function of one flat parameter vector; `analytic` is the backward
// pass result for the same vector. Coordinates whose input magnitude is
// below `kink_skip` are excluded (ReLU-style nondifferentiable points).
// When `max_coords` > 0, a deterministic random subset of coordinates is
// checked instead of all of them.
struct GradCheckOptions {
    double perturbation = 1e-5;
    double kink_skip = -1.0;       // < 0 disables kink skipping
    std::int64_t max_coords = 0;   // 0 = all coordinates
    std::uint64_t seed = 0;
    // floor on |analytic|+|numeric| in the relative-error denominator;
    // raise it when true gradient entries sit near rounding noise
    double denom_floor = 1e-8;
};

inline double grad_rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

inline double grad_check(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x,
                         const std::vector<double>& analytic,
                         const GradCheckOptions& opt = {}) {
    if (x.size() != analytic.size())
        throw ShapeError("grad_check: gradient length mismatch");
    const double h = opt.perturbation;
    if (h < 1e-7 || h > 1e-4)
        throw InputError("grad_check: perturbation out of [1e-7, 1e-4]");

    std::vector<std::size_t> coords;
    if (opt.max_coords > 0 && static_cast<std::int64_t>(x.size()) > opt.max_coords) {
        std::mt19937_64 rng(opt.seed);
        std::vector<std::size_t> all(x.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        for (std::int64_t i = 0; i < opt.max_coords; ++i) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), all.size() - 1);
            std::swap(all[static_cast<std::size_t>(i)], all[pick(rng)]);
        }
        coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.max_coords));
    } else {
        coords.resize(x.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }

    std::vector<double> probe = x;
    double max_err = 0.0;
    for (std::size_t i : coords) {
        if (opt.kink_skip > 0.0 && std::abs(x[i]) < opt.kink_skip) continue;
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite objective at coordinate " +
                               std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(opt.denom_floor,
                                    std::abs(analytic[i]) + std::abs(numeric));
        if (!std::isfinite(analytic[i]))
            throw NumericError("grad_check: non-finite analytic gradient at coordinate " +
                               std::to_string(i));
        if (err > max_err) max_err = err;
    }
    return max_err;
}

}  // namespace seqseg
