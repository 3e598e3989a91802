#pragma once

// Small-signal AC analysis by modified nodal analysis.

#include "otasizer/error.hpp"
#include "otasizer/netlist.hpp"
#include "otasizer/symexpr.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace otasizer {

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
/// A is row-major n x n. Throws SingularMatrix on a vanishing pivot.
inline void lu_solve(std::vector<Complex>& a, std::vector<Complex>& b, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::abs(a[k * n + k]);
        for (std::size_t r = k + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + k]);
            if (v > best) {
                best = v;
                piv = r;
            }
        }
        if (!(best > 1e-300)) throw Error(Errc::SingularMatrix, "pivot " + std::to_string(k) + " vanishes");
        if (piv != k) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[k * n + c], a[piv * n + c]);
            std::swap(b[k], b[piv]);
        }
        const Complex inv = 1.0 / a[k * n + k];
        for (std::size_t r = k + 1; r < n; ++r) {
            const Complex f = a[r * n + k] * inv;
            if (f == Complex{}) continue;
            for (std::size_t c = k + 1; c < n; ++c) a[r * n + c] -= f * a[k * n + c];
            b[r] -= f * b[k];
        }
    }
    for (std::size_t k = n; k-- > 0;) {
        Complex acc = b[k];
        for (std::size_t c = k + 1; c < n; ++c) acc -= a[k * n + c] * b[c];
        b[k] = acc / a[k * n + k];
    }
}

/// Pre-indexed MNA stamps of a circuit for one (input, output) pair.
class AcSystem {
public:
    AcSystem(const SmallSignalCircuit& c, const std::string& input, const std::string& output) : bindings_(c.bindings) {
        for (std::size_t i = 0; i < c.nodes.size(); ++i) index_[c.nodes[i]] = static_cast<int>(i);
        n_ = c.nodes.size();
        const SsSource* src = c.source(input);
        if (!src) throw Error(Errc::NoExcitation, "no source named " + input);
        auto out = index_.find(output);
        if (out == index_.end()) throw Error(Errc::NoExcitation, "output node " + output + " is not a circuit node");
        out_ = out->second;

        for (auto const& y : c.admittances) {
            const int a = idx(y.n1), b = idx(y.n2);
            if (a < 0 && b < 0) continue;
            adm_.push_back({a, b, y.y});
        }
        for (auto const& g : c.vccs) {
            auto it = c.bindings.find(g.param);
            if (it == c.bindings.end()) throw Error(Errc::UnboundParameter, g.param);
            vccs_.push_back({idx(g.out_p), idx(g.out_n), idx(g.ctrl_p), idx(g.ctrl_n), it->second});
        }
        // Every voltage source gets a branch-current unknown; only the input is excited.
        for (auto const& s : c.sources) {
            if (!s.voltage) {
                if (&s == src) {
                    ip_ = idx(s.n_p);
                    in_ = idx(s.n_n);
                }
                continue;
            }
            vsrc_.push_back({idx(s.n_p), idx(s.n_n), &s == src});
        }
        dim_ = n_ + vsrc_.size();
    }

    /// V(output) per unit excitation at complex frequency s.
    Complex transfer(Complex s) const {
        std::vector<Complex> a(dim_ * dim_), b(dim_);
        auto add = [&](int r, int col, Complex v) {
            if (r >= 0 && col >= 0) a[static_cast<std::size_t>(r) * dim_ + static_cast<std::size_t>(col)] += v;
        };
        for (auto const& y : adm_) {
            const Complex v = y.y.eval(bindings_, s);
            add(y.a, y.a, v);
            add(y.b, y.b, v);
            add(y.a, y.b, -v);
            add(y.b, y.a, -v);
        }
        // Current gm*(V(cp)-V(cn)) enters op and leaves on.
        for (auto const& g : vccs_) {
            add(g.op, g.cp, -g.gm);
            add(g.op, g.cn, g.gm);
            add(g.on, g.cp, g.gm);
            add(g.on, g.cn, -g.gm);
        }
        for (std::size_t k = 0; k < vsrc_.size(); ++k) {
            const int br = static_cast<int>(n_ + k);
            add(vsrc_[k].p, br, 1.0);
            add(vsrc_[k].n, br, -1.0);
            add(br, vsrc_[k].p, 1.0);
            add(br, vsrc_[k].n, -1.0);
            if (vsrc_[k].excited) b[static_cast<std::size_t>(br)] = 1.0;
        }
        if (in_ >= 0) b[static_cast<std::size_t>(in_)] += 1.0;
        if (ip_ >= 0) b[static_cast<std::size_t>(ip_)] -= 1.0;
        lu_solve(a, b, dim_);
        return b[static_cast<std::size_t>(out_)];
    }

    Complex at_hz(double f) const { return transfer(Complex(0.0, 2.0 * std::numbers::pi * f)); }

private:
    int idx(const std::string& node) const {
        auto it = index_.find(node);
        return it == index_.end() ? -1 : it->second;
    }

    struct AdmStamp {
        int a, b;
        AdmittanceExpr y;
    };
    struct VccsStamp {
        int op, on, cp, cn;
        double gm;
    };
    struct VsrcStamp {
        int p, n;
        bool excited;
    };

    Bindings bindings_;
    std::unordered_map<std::string, int> index_;
    std::vector<AdmStamp> adm_;
    std::vector<VccsStamp> vccs_;
    std::vector<VsrcStamp> vsrc_;
    std::size_t n_ = 0, dim_ = 0;
    int out_ = -1, ip_ = -1, in_ = -1;
};

inline std::vector<Complex> solve_ac(const SmallSignalCircuit& c, const std::string& input, const std::string& output,
                                     const std::vector<double>& freqs) {
    AcSystem sys(c, input, output);
    std::vector<Complex> out;
    out.reserve(freqs.size());
    for (double f : freqs) {
        if (!(f > 0)) throw Error(Errc::OutOfRange, "frequency must be positive");
        out.push_back(sys.at_hz(f));
    }
    return out;
}

struct AcMetrics {
    double gain_db = 0;
    std::optional<double> bw_hz;  // nullopt: |H| never falls 3 dB in the sweep
    std::optional<double> ugf_hz; // nullopt: NotCrossed

    bool complete() const { return bw_hz && ugf_hz; }
    SpecTriple spec() const { return {gain_db, bw_hz.value_or(0.0), ugf_hz.value_or(0.0)}; }
};

struct AcResult {
    AcMetrics metrics;
    std::vector<std::pair<double, Complex>> sweep;
};

struct SweepConfig {
    double f_low = 1.0;
    double f_high = 100e9;
    int points_per_decade = 50;
    double rel_tol = 1e-10;
};

inline std::vector<double> log_frequencies(const SweepConfig& cfg) {
    const double decades = std::log10(cfg.f_high / cfg.f_low);
    const int n = static_cast<int>(std::lround(decades * cfg.points_per_decade));
    std::vector<double> f(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) f[static_cast<std::size_t>(i)] = cfg.f_low * std::pow(10.0, static_cast<double>(i) / cfg.points_per_decade);
    f.back() = cfg.f_high;
    return f;
}

namespace detail {

// Smallest swept frequency where |H| crosses `level`, refined by bisection in log f.
inline std::optional<double> crossing(const AcSystem& sys, const std::vector<std::pair<double, Complex>>& sweep, double level,
                                      double rel_tol) {
    for (std::size_t i = 1; i < sweep.size(); ++i) {
        const double m0 = std::abs(sweep[i - 1].second) - level;
        const double m1 = std::abs(sweep[i].second) - level;
        if (m1 == 0.0) return sweep[i].first;
        if ((m0 > 0) == (m1 > 0)) continue;
        double lo = std::log(sweep[i - 1].first), hi = std::log(sweep[i].first);
        const bool above_lo = m0 > 0;
        while (hi - lo > rel_tol) {
            const double mid = 0.5 * (lo + hi);
            const bool above = std::abs(sys.at_hz(std::exp(mid))) - level > 0;
            (above == above_lo ? lo : hi) = mid;
        }
        return std::exp(0.5 * (lo + hi));
    }
    return std::nullopt;
}

} // namespace detail

/// Gain at f_low, first -3 dB frequency and first unity crossing.
inline AcResult measure(const SmallSignalCircuit& c, const std::string& input, const std::string& output,
                        const SweepConfig& cfg = {}) {
    AcSystem sys(c, input, output);
    AcResult r;
    for (double f : log_frequencies(cfg)) r.sweep.emplace_back(f, sys.at_hz(f));
    const double h0 = std::abs(r.sweep.front().second);
    r.metrics.gain_db = 20.0 * std::log10(h0);
    r.metrics.bw_hz = detail::crossing(sys, r.sweep, h0 / std::numbers::sqrt2, cfg.rel_tol);
    r.metrics.ugf_hz = detail::crossing(sys, r.sweep, 1.0, cfg.rel_tol);
    return r;
}

/// Convenience: the circuit's only excitation source.
inline std::string default_input(const SmallSignalCircuit& c) {
    if (c.sources.empty()) throw Error(Errc::NoExcitation, "circuit has no source");
    return c.sources.front().name;
}

} // namespace otasizer
