#pragma once

#include <cmath>
#include <functional>

#include "movgan/rng.hpp"
#include "movgan/tensor.hpp"

namespace movgan::test {

// Central finite difference of a scalar functional w.r.t. x[i]. `eval` must
// recompute the functional from the (mutated) tensor on every call.
inline double central_diff(const std::function<double()>& eval, Tensor& x, int64_t i,
                           double h = 1e-5) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = eval();
    x[i] = saved - h;
    const double down = eval();
    x[i] = saved;
    return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Low-frequency random field: DC level plus a few sub-Nyquist cosines, used
// by resampling round-trip tests.
inline Tensor smooth_field(int channels, int h, int w, Rng& rng) {
    Tensor t({channels, h, w});
    for (int f = 0; f < channels; ++f) {
        const double dc = rng.uniform(0.8, 1.2);
        double amp[3], px[3], py[3], phase[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = 0.2 / (k + 1);
            px[k] = rng.uniform(0.3, 1.2);
            py[k] = rng.uniform(0.3, 1.2);
            phase[k] = rng.uniform(0.0, 6.28318);
        }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double v = dc;
                for (int k = 0; k < 3; ++k)
                    v += amp[k] * std::cos(3.14159265358979 * (px[k] * i / h + py[k] * j / w) +
                                           phase[k]);
                t.at(f, i, j) = v;
            }
    }
    return t;
}

}  // namespace movgan::test
