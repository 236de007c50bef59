#pragma once

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "driftlab/core.hpp"

namespace driftlab::stats {

struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;
};

inline Estimate mean_se(const std::vector<double>& x) {
    require(!x.empty(), ErrorKind::domain, "mean of an empty sample");
    Estimate e;
    e.samples = x.size();
    e.value = pairwise_sum(x) / static_cast<double>(x.size());
    if (x.size() < 2) return e;
    std::vector<double> sq(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) sq[k] = (x[k] - e.value) * (x[k] - e.value);
    const double var = pairwise_sum(sq) / static_cast<double>(x.size() - 1);
    e.stderr_ = std::sqrt(var / static_cast<double>(x.size()));
    return e;
}

/// Mean with the standard error taken from contiguous batch means.
inline Estimate batch_means(const std::vector<double>& x, std::size_t batches = 100) {
    if (x.size() < 2 * batches) return mean_se(x);
    const std::size_t per = x.size() / batches;
    std::vector<double> means(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * per, hi = b + 1 == batches ? x.size() : lo + per;
        means[b] = pairwise_sum(x.data() + lo, hi - lo) / static_cast<double>(hi - lo);
    }
    Estimate e = mean_se(means);
    e.value = pairwise_sum(x) / static_cast<double>(x.size());
    e.samples = x.size();
    return e;
}

struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;
    double slope_lo = 0.0;  // 95% confidence interval
    double slope_hi = 0.0;
    std::size_t points = 0;
};

/// Ordinary least squares y = a + b x with a Student-t interval on b.
inline LinearFit ols(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 3, ErrorKind::domain, "least squares needs at least 3 points");
    const double n = static_cast<double>(x.size());
    const double mx = pairwise_sum(x) / n, my = pairwise_sum(y) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    require(sxx > 0.0, ErrorKind::domain, "degenerate abscissae");
    LinearFit f;
    f.points = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double r = y[k] - f.intercept - f.slope * x[k];
        sse += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    f.slope_se = std::sqrt(sse / (n - 2.0) / sxx);
    const double tq = boost::math::quantile(boost::math::students_t(n - 2.0), 0.975);
    f.slope_lo = f.slope - tq * f.slope_se;
    f.slope_hi = f.slope + tq * f.slope_se;
    return f;
}

}  // namespace driftlab::stats
