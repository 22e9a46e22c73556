#pragma once

// Central finite-difference oracle for gradient checks. Perturbs one scalar
// at a time; coordinates where the one-sided slopes disagree badly (a relu
// kink inside the probe interval, where no finite-difference estimate is
// valid) are skipped and counted, and callers assert that skips stay rare.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

struct FdResult {
    double max_rel = 0.0;
    int checked = 0;
    int skipped = 0;
};

template <typename LossFn>
void fd_check_buffer(FdResult& r, LossFn&& loss, double* data, Eigen::Index n,
                     const double* analytic, double h = 1e-5) {
    for (Eigen::Index i = 0; i < n; ++i) {
        const double orig = data[i];
        const double l0 = loss();
        data[i] = orig + h;
        const double lp = loss();
        data[i] = orig - h;
        const double lm = loss();
        data[i] = orig;

        const double dplus = (lp - l0) / h;
        const double dminus = (l0 - lm) / h;
        if (std::abs(dplus - dminus) >
            0.1 * std::max({std::abs(dplus), std::abs(dminus), 1e-3})) {
            ++r.skipped;
            continue;
        }
        const double fd = (lp - lm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
        r.max_rel = std::max(r.max_rel, rel);
        ++r.checked;
    }
}
