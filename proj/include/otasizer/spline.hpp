#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace otasizer {

/// Natural cubic spline through (x_i, y_i), x strictly increasing.
/// Second derivatives vanish at both ends. Outside the knot range the end
/// cubic pieces are extended.
class NaturalSpline {
public:
    NaturalSpline() = default;

    NaturalSpline(std::span<const double> x, std::span<const double> y) : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
        const std::size_t n = x_.size();
        m_.assign(n, 0.0);
        if (n < 3) return;
        // Tridiagonal system for the interior second derivatives (Thomas algorithm).
        std::vector<double> c(n, 0.0), d(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = x_[i] - x_[i - 1];
            const double h1 = x_[i + 1] - x_[i];
            const double a = h0 / 6.0;
            const double b = (h0 + h1) / 3.0;
            const double cc = h1 / 6.0;
            const double rhs = (y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0;
            const double denom = b - a * c[i - 1];
            c[i] = cc / denom;
            d[i] = (rhs - a * d[i - 1]) / denom;
        }
        for (std::size_t i = n - 2; i >= 1; --i) {
            m_[i] = d[i] - c[i] * m_[i + 1];
            if (i == 1) break;
        }
    }

    double operator()(double xq) const {
        const std::size_t n = x_.size();
        if (n == 1) return y_[0];
        std::size_t hi = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin());
        hi = std::clamp<std::size_t>(hi, 1, n - 1);
        const std::size_t lo = hi - 1;
        const double h = x_[hi] - x_[lo];
        if (xq == x_[lo]) return y_[lo];
        if (xq == x_[hi]) return y_[hi];
        const double a = (x_[hi] - xq) / h;
        const double b = (xq - x_[lo]) / h;
        return a * y_[lo] + b * y_[hi] + ((a * a * a - a) * m_[lo] + (b * b * b - b) * m_[hi]) * (h * h) / 6.0;
    }

    const std::vector<double>& knots() const { return x_; }

private:
    std::vector<double> x_, y_, m_;
};

} // namespace otasizer
