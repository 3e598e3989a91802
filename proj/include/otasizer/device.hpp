#pragma once

// Analytical MOS model, width-normalised lookup tables and gm/Id queries.

#include "otasizer/error.hpp"
#include "otasizer/spline.hpp"
#include "otasizer/units.hpp"

#include "json.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace otasizer {

enum class Polarity { N, P };

inline char polarity_char(Polarity p) { return p == Polarity::N ? 'N' : 'P'; }

/// Smooth EKV-style long-channel model. Voltages for P devices are
/// source-referenced magnitudes (Vsg, Vsd), so both polarities use the same
/// equations.
///
///   Id  = 2 n beta W (lref/L) UT^2 ln^2(1 + exp((Vgs - Vth)/(2 n UT))) tanh(Vds/vsat) (1 + lambda Vds tanh(Vds/vsat))
///   Cgs = W (cgso + 2/3 cox L sigmoid((Vgs - Vth)/(2 n UT)))
///   Cds = W cj / sqrt(1 + Vds/pb)
///
/// lambda is scaled by lref/L so shorter devices show more output conductance.
struct DeviceModel {
    Polarity polarity = Polarity::N;
    double vth = 0.5;        // V
    double n = 1.25;         // subthreshold slope factor
    double beta = 1666.67;   // A/V^2 per metre of width at L = lref
    double lambda = 0.6;     // 1/V at L = lref
    double ut = 0.025852;    // thermal voltage, V
    double vsat = 0.2;       // Vds scale of the triode/saturation transition, V
    double cox = 0.012;      // F/m^2
    double cgso = 0.3e-9;    // gate overlap, F/m of width
    double cj = 0.8e-9;      // drain junction at zero bias, F/m of width
    double pb = 0.8;         // junction potential, V
    double lref = 180e-9;    // m
    double vmax = 1.2;       // validity range for |Vgs|, |Vds|, V

    static DeviceModel nmos() { return DeviceModel{}; }

    static DeviceModel pmos() {
        DeviceModel m;
        m.polarity = Polarity::P;
        m.vth = 0.4;
        m.n = 1.3;
        m.beta = 100e-6 / 180e-9;
        m.lambda = 0.7;
        m.cgso = 0.3e-9;
        m.cj = 0.9e-9;
        return m;
    }

    friend bool operator==(const DeviceModel&, const DeviceModel&) = default;
};

inline nlohmann::json to_json(const DeviceModel& m) {
    return nlohmann::json{{"polarity", std::string(1, polarity_char(m.polarity))},
                          {"vth", m.vth}, {"n", m.n}, {"beta", m.beta}, {"lambda", m.lambda},
                          {"ut", m.ut}, {"vsat", m.vsat}, {"cox", m.cox}, {"cgso", m.cgso},
                          {"cj", m.cj}, {"pb", m.pb}, {"lref", m.lref}, {"vmax", m.vmax}};
}

inline DeviceModel device_model_from_json(const nlohmann::json& j) {
    DeviceModel m;
    m.polarity = j.at("polarity").get<std::string>() == "P" ? Polarity::P : Polarity::N;
    m.vth = j.at("vth");
    m.n = j.at("n");
    m.beta = j.at("beta");
    m.lambda = j.at("lambda");
    m.ut = j.at("ut");
    m.vsat = j.at("vsat");
    m.cox = j.at("cox");
    m.cgso = j.at("cgso");
    m.cj = j.at("cj");
    m.pb = j.at("pb");
    m.lref = j.at("lref");
    m.vmax = j.at("vmax");
    return m;
}

/// The five characterised quantities. Per device (absolute) or per unit
/// width, depending on where they come from.
struct DeviceOutputs {
    double id = 0, gm = 0, gds = 0, cds = 0, cgs = 0;

    double& operator[](std::size_t i) { return (&id)[i]; }
    double operator[](std::size_t i) const { return (&id)[i]; }
    static constexpr std::size_t size() { return 5; }

    friend bool operator==(const DeviceOutputs&, const DeviceOutputs&) = default;
};

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

inline DeviceOutputs eval_model(const DeviceModel& m, double vgs, double vds, double l, double w) {
    constexpr double slack = 1e-12;
    if (!(vgs >= -slack && vgs <= m.vmax + slack && vds >= -slack && vds <= m.vmax + slack))
        throw Error(Errc::OutOfRange, "bias (" + units::exact(vgs) + ", " + units::exact(vds) + ") outside [0, " +
                                          units::exact(m.vmax) + "]");
    if (!(w > 0 && l > 0)) throw Error(Errc::OutOfRange, "W and L must be positive");
    vgs = std::clamp(vgs, 0.0, m.vmax);
    vds = std::clamp(vds, 0.0, m.vmax);

    const double two_n_ut = 2.0 * m.n * m.ut;
    const double x = (vgs - m.vth) / two_n_ut;
    const double sp = detail::softplus(x);
    const double sg = detail::sigmoid(x);
    const double f = sp * sp;
    const double df = 2.0 * sp * sg / two_n_ut;

    const double lam = m.lambda * m.lref / l;
    const double th = std::tanh(vds / m.vsat);
    const double dth = (1.0 - th * th) / m.vsat;
    const double g = th * (1.0 + lam * vds * th);
    const double dg = dth * (1.0 + 2.0 * lam * vds * th) + lam * th * th;

    const double scale = 2.0 * m.n * m.beta * w * (m.lref / l) * m.ut * m.ut;
    DeviceOutputs o;
    o.id = scale * f * g;
    o.gm = scale * df * g;
    o.gds = scale * f * dg;
    o.cgs = w * (m.cgso + (2.0 / 3.0) * m.cox * l * sg);
    o.cds = w * m.cj / std::sqrt(1.0 + vds / m.pb);
    return o;
}

struct LutGridConfig {
    double vgs_min = 0.0, vgs_max = 1.2, vgs_step = 0.06;
    double vds_min = 0.0, vds_max = 1.2, vds_step = 0.06;
    std::vector<double> lengths{180e-9};
    double wref = 700e-9;
};

namespace detail {

inline std::vector<double> linspace_step(double lo, double hi, double step) {
    const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = (i + 1 == n) ? hi : lo + static_cast<double>(i) * step;
    return v;
}

inline std::string join_csv(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += units::full(v[i]);
    }
    return s;
}

inline bool strictly_increasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return !v.empty();
}

} // namespace detail

/// Width-normalised characterisation table over (Vgs, Vds, L).
///
/// Interpolation is separable: a natural cubic spline along Vgs for every
/// stored (Vds, L) line, then a natural spline along Vds through those
/// values, then linear in L. Lines whose values are all positive are
/// interpolated along Vgs in the log domain, which keeps the exponential
/// subthreshold region accurate at a 60 mV knot spacing.
class DeviceLut {
public:
    DeviceLut() = default;

    DeviceLut(Polarity polarity, double wref, std::vector<double> vgs, std::vector<double> vds, std::vector<double> l,
              std::vector<DeviceOutputs> table, nlohmann::json model = {})
        : polarity_(polarity), wref_(wref), vgs_(std::move(vgs)), vds_(std::move(vds)), l_(std::move(l)),
          table_(std::move(table)), model_(std::move(model)) {
        if (!detail::strictly_increasing(vgs_) || !detail::strictly_increasing(vds_) ||
            !detail::strictly_increasing(l_))
            throw Error(Errc::BadFormat, "LUT grids must be strictly increasing");
        if (table_.size() != vgs_.size() * vds_.size() * l_.size())
            throw Error(Errc::BadFormat, "LUT table size does not match grid");
        for (auto const& row : table_)
            for (std::size_t q = 0; q < DeviceOutputs::size(); ++q)
                if (!std::isfinite(row[q])) throw Error(Errc::NonFiniteValue, "LUT entry is not finite");
        prepare();
    }

    Polarity polarity() const { return polarity_; }
    double wref() const { return wref_; }
    const std::vector<double>& vgs_grid() const { return vgs_; }
    const std::vector<double>& vds_grid() const { return vds_; }
    const std::vector<double>& l_grid() const { return l_; }
    const nlohmann::json& model_json() const { return model_; }
    const std::vector<DeviceOutputs>& table() const { return table_; }

    const DeviceOutputs& at(std::size_t ivgs, std::size_t ivds, std::size_t il) const {
        return table_[index(ivgs, ivds, il)];
    }

    bool in_hull(double vgs, double vds, double l) const {
        constexpr double eps = 1e-12;
        return vgs >= vgs_.front() - eps && vgs <= vgs_.back() + eps && vds >= vds_.front() - eps &&
               vds <= vds_.back() + eps && l >= l_.front() * (1 - 1e-9) && l <= l_.back() * (1 + 1e-9);
    }

    /// Per-unit-width quantities at an arbitrary point inside the grid hull.
    DeviceOutputs query(double vgs, double vds, double l) const {
        check_hull(vgs, vds, l);
        return blend_l(l, [&](std::size_t il) { return query_at_l(vgs, vds, il); });
    }

    /// The five quantities along Vds at fixed Vgs and L, as splines.
    struct VdsProfile {
        std::array<NaturalSpline, 5> q;
        DeviceOutputs operator()(double vds) const {
            DeviceOutputs o;
            for (std::size_t i = 0; i < 5; ++i) o[i] = q[i](vds);
            return o;
        }
    };

    VdsProfile vds_profile(double vgs, double l) const {
        check_hull(vgs, vds_.front(), l);
        std::array<std::vector<double>, 5> cols;
        for (auto& c : cols) c.resize(vds_.size());
        for (std::size_t j = 0; j < vds_.size(); ++j) {
            DeviceOutputs v = blend_l(l, [&](std::size_t il) { return along_vgs(vgs, j, il); });
            for (std::size_t q = 0; q < 5; ++q) cols[q][j] = v[q];
        }
        VdsProfile p;
        for (std::size_t q = 0; q < 5; ++q) p.q[q] = NaturalSpline(vds_, cols[q]);
        return p;
    }

    /// gm/Id at a point (1/V).
    double gm_over_id(double vgs, double vds, double l) const {
        const DeviceOutputs o = query(vgs, vds, l);
        return o.gm / o.id;
    }

    void write_csv(std::ostream& os) const {
        os << "#polarity " << polarity_char(polarity_) << '\n';
        os << "#wref_m " << units::full(wref_) << '\n';
        os << "#model " << model_.dump() << '\n';
        os << "#grid vgs=" << detail::join_csv(vgs_) << " vds=" << detail::join_csv(vds_)
           << " l=" << detail::join_csv(l_) << '\n';
        os << "vgs,vds,l,id,gm,gds,cds,cgs\n";
        for (std::size_t il = 0; il < l_.size(); ++il)
            for (std::size_t j = 0; j < vds_.size(); ++j)
                for (std::size_t i = 0; i < vgs_.size(); ++i) {
                    const auto& r = at(i, j, il);
                    os << units::full(vgs_[i]) << ',' << units::full(vds_[j]) << ',' << units::full(l_[il]);
                    for (std::size_t q = 0; q < 5; ++q) os << ',' << units::full(r[q]);
                    os << '\n';
                }
    }

    static DeviceLut read_csv(std::istream& is) {
        std::string line;
        Polarity pol = Polarity::N;
        double wref = 0;
        nlohmann::json model;
        std::vector<double> vgs, vds, l;
        std::vector<DeviceOutputs> rows;
        auto parse_list = [](const std::string& s) {
            std::vector<double> v;
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
            return v;
        };
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            if (line.rfind("#polarity ", 0) == 0) {
                pol = line.substr(10) == "P" ? Polarity::P : Polarity::N;
            } else if (line.rfind("#wref_m ", 0) == 0) {
                wref = std::stod(line.substr(8));
            } else if (line.rfind("#model ", 0) == 0) {
                model = nlohmann::json::parse(line.substr(7));
            } else if (line.rfind("#grid ", 0) == 0) {
                std::stringstream ss(line.substr(6));
                std::string part;
                while (ss >> part) {
                    auto eq = part.find('=');
                    if (eq == std::string::npos) throw Error(Errc::BadFormat, "bad #grid entry " + part);
                    auto key = part.substr(0, eq);
                    auto vals = parse_list(part.substr(eq + 1));
                    if (key == "vgs") vgs = vals;
                    else if (key == "vds") vds = vals;
                    else if (key == "l") l = vals;
                }
            } else if (line[0] == '#' || line.rfind("vgs,", 0) == 0) {
                continue;
            } else {
                auto v = parse_list(line);
                if (v.size() != 8) throw Error(Errc::BadFormat, "LUT row needs 8 columns: " + line);
                DeviceOutputs o;
                for (std::size_t q = 0; q < 5; ++q) o[q] = v[3 + q];
                rows.push_back(o);
            }
        }
        return DeviceLut(pol, wref, vgs, vds, l, rows, model);
    }

private:
    std::size_t index(std::size_t ivgs, std::size_t ivds, std::size_t il) const {
        return (il * vds_.size() + ivds) * vgs_.size() + ivgs;
    }

    void check_hull(double vgs, double vds, double l) const {
        if (!in_hull(vgs, vds, l))
            throw Error(Errc::OutOfHull, "query (" + units::exact(vgs) + ", " + units::exact(vds) + ", " +
                                             units::exact(l) + ") outside LUT grid");
    }

    void prepare() {
        const std::size_t lines = vds_.size() * l_.size();
        splines_.assign(lines, {});
        logged_.assign(lines, {});
        std::vector<double> y(vgs_.size());
        for (std::size_t il = 0; il < l_.size(); ++il)
            for (std::size_t j = 0; j < vds_.size(); ++j) {
                const std::size_t line = il * vds_.size() + j;
                for (std::size_t q = 0; q < 5; ++q) {
                    bool positive = true;
                    for (std::size_t i = 0; i < vgs_.size(); ++i) positive = positive && at(i, j, il)[q] > 0;
                    logged_[line][q] = positive;
                    for (std::size_t i = 0; i < vgs_.size(); ++i) {
                        const double v = at(i, j, il)[q];
                        y[i] = positive ? std::log(v) : v;
                    }
                    splines_[line][q] = NaturalSpline(vgs_, y);
                }
            }
    }

    DeviceOutputs along_vgs(double vgs, std::size_t j, std::size_t il) const {
        const auto knot = std::lower_bound(vgs_.begin(), vgs_.end(), vgs);
        if (knot != vgs_.end() && *knot == vgs) return at(static_cast<std::size_t>(knot - vgs_.begin()), j, il);
        const std::size_t line = il * vds_.size() + j;
        DeviceOutputs o;
        for (std::size_t q = 0; q < 5; ++q) {
            const double v = splines_[line][q](vgs);
            o[q] = logged_[line][q] ? std::exp(v) : v;
        }
        return o;
    }

    DeviceOutputs query_at_l(double vgs, double vds, std::size_t il) const {
        const auto knot = std::lower_bound(vds_.begin(), vds_.end(), vds);
        if (knot != vds_.end() && *knot == vds) return along_vgs(vgs, static_cast<std::size_t>(knot - vds_.begin()), il);
        std::array<std::vector<double>, 5> cols;
        for (auto& c : cols) c.resize(vds_.size());
        for (std::size_t j = 0; j < vds_.size(); ++j) {
            const DeviceOutputs v = along_vgs(vgs, j, il);
            for (std::size_t q = 0; q < 5; ++q) cols[q][j] = v[q];
        }
        DeviceOutputs o;
        for (std::size_t q = 0; q < 5; ++q) o[q] = NaturalSpline(vds_, cols[q])(vds);
        return o;
    }

    template <class F>
    DeviceOutputs blend_l(double l, F&& at_l) const {
        if (l_.size() == 1) return at_l(0);
        std::size_t hi = static_cast<std::size_t>(std::upper_bound(l_.begin(), l_.end(), l) - l_.begin());
        hi = std::clamp<std::size_t>(hi, 1, l_.size() - 1);
        const std::size_t lo = hi - 1;
        if (l <= l_[lo]) return at_l(lo);
        if (l >= l_[hi]) return at_l(hi);
        const double t = (l - l_[lo]) / (l_[hi] - l_[lo]);
        const DeviceOutputs a = at_l(lo), b = at_l(hi);
        DeviceOutputs o;
        for (std::size_t q = 0; q < 5; ++q) o[q] = (1 - t) * a[q] + t * b[q];
        return o;
    }

    Polarity polarity_ = Polarity::N;
    double wref_ = 0;
    std::vector<double> vgs_, vds_, l_;
    std::vector<DeviceOutputs> table_;
    nlohmann::json model_;
    std::vector<std::array<NaturalSpline, 5>> splines_;
    std::vector<std::array<bool, 5>> logged_;
};

/// Characterises `m` at the reference width over the configured grid and
/// stores every quantity divided by that width.
inline DeviceLut build_lut(const DeviceModel& m, const LutGridConfig& cfg = {}) {
    auto vgs = detail::linspace_step(cfg.vgs_min, cfg.vgs_max, cfg.vgs_step);
    auto vds = detail::linspace_step(cfg.vds_min, cfg.vds_max, cfg.vds_step);
    std::vector<DeviceOutputs> table;
    table.reserve(vgs.size() * vds.size() * cfg.lengths.size());
    for (double l : cfg.lengths)
        for (double d : vds)
            for (double g : vgs) {
                DeviceOutputs o = eval_model(m, g, d, l, cfg.wref);
                for (std::size_t q = 0; q < 5; ++q) o[q] /= cfg.wref;
                table.push_back(o);
            }
    return DeviceLut(m.polarity, cfg.wref, vgs, vds, cfg.lengths, std::move(table), to_json(m));
}

inline DeviceLut load_lut(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::BadFormat, "cannot open LUT file " + path);
    return DeviceLut::read_csv(in);
}

/// Vgs at which the interpolated gm/Id equals `target`, by bisection on the
/// (monotone decreasing) interpolated ratio.
inline double find_vgs_for_gmid(const DeviceLut& lut, double target, double vds, double l) {
    const auto& g = lut.vgs_grid();
    double lo = g.front(), hi = g.back();
    const double r_lo = lut.gm_over_id(lo, vds, l);
    const double r_hi = lut.gm_over_id(hi, vds, l);
    if (!(target <= r_lo && target >= r_hi))
        throw Error(Errc::TargetOutOfRange, "gm/Id " + units::exact(target) + " outside [" + units::exact(r_hi) + ", " +
                                                units::exact(r_lo) + "]");
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = lut.gm_over_id(mid, vds, l);
        if (r == target) return mid;
        if (r > target) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace otasizer
