#pragma once

// OTA templates: device lists, match groups, region constraints and a bias
// solve that turns a set of group widths into consistent `.bias` lines.
//
// Rails are AC ground in the small-signal netlists, so PMOS sources and
// bias-driven gates are written on node "0". Bias voltages are magnitudes.

#include "otasizer/device.hpp"
#include "otasizer/error.hpp"
#include "otasizer/netlist.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace otasizer {

enum class Region { Weak, Moderate, Strong };

inline const char* region_name(Region r) {
    switch (r) {
    case Region::Weak: return "weak";
    case Region::Moderate: return "moderate";
    case Region::Strong: return "strong";
    }
    return "?";
}

inline Region region_of_ratio(double gm_over_id) {
    if (gm_over_id > 20.0) return Region::Weak;
    if (gm_over_id < 10.0) return Region::Strong;
    return Region::Moderate;
}

inline Region region_of(const DeviceLut& lut, double vgs, double vds, double l) {
    return region_of_ratio(lut.gm_over_id(vgs, vds, l));
}

inline Region region_of(const DeviceModel& m, double vgs, double vds, double l) {
    const auto o = eval_model(m, vgs, vds, l, 1e-6);
    return region_of_ratio(o.gm / o.id);
}

struct TemplateDevice {
    std::string name;
    std::string d, g, s;
    Polarity polarity;
    std::string group;
};

struct WidthGroup {
    std::string name;
    std::vector<std::string> members;
    Region region;
};

struct DeviceBias {
    double vgs = 0, vds = 0, id = 0;
};

using GroupWidths = std::map<std::string, double>;
using BiasMap = std::map<std::string, DeviceBias>;

enum class TopologyKind { FiveT, CurrentMirror, TwoStage };

struct TopologyConfig {
    double vdd = 1.2;
    double vcm = 0.7;     // input common mode
    double vb_tail = 0.7;
    double vb_load = 0.72; // second-stage current source gate (2S)
    double l = 180e-9;
    double cl = 500e-15;
    double cc = 200e-15; // Miller capacitor (2S)
};

namespace detail {

/// Root of a decreasing function on [lo, hi] by bisection; nullopt without a sign change.
inline std::optional<double> bisect_decreasing(const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo), fhi = f(hi);
    if (flo < 0 || fhi > 0) return std::nullopt;
    for (int i = 0; i < 200 && hi - lo > 1e-14; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

class Topology {
public:
    Topology(TopologyKind kind, TopologyConfig cfg = {}) : kind_(kind), cfg_(cfg) {
        using P = Polarity;
        switch (kind) {
        case TopologyKind::FiveT:
            name_ = "5T-OTA";
            devices_ = {{"M1", "x", "inp", "tail", P::N, "dp"},
                        {"M2", "out", "inn", "tail", P::N, "dp"},
                        {"M3", "x", "x", "0", P::P, "cm"},
                        {"M4", "out", "x", "0", P::P, "cm"},
                        {"M5", "tail", "0", "0", P::N, "tail"}};
            groups_ = {{"dp", {"M1", "M2"}, Region::Weak}, {"cm", {"M3", "M4"}, Region::Strong}, {"tail", {"M5"}, Region::Strong}};
            break;
        case TopologyKind::CurrentMirror:
            name_ = "CM-OTA";
            devices_ = {{"M1", "xa", "inp", "tail", P::N, "dp"},
                        {"M2", "xb", "inn", "tail", P::N, "dp"},
                        {"M3", "xa", "xa", "0", P::P, "cmp"},
                        {"M4", "xb", "xb", "0", P::P, "cmp"},
                        {"M5", "out", "xb", "0", P::P, "cmo"},
                        {"M6", "y", "xa", "0", P::P, "cmo"},
                        {"M7", "y", "y", "0", P::N, "cmn"},
                        {"M8", "out", "y", "0", P::N, "cmn"},
                        {"M9", "tail", "0", "0", P::N, "tail"}};
            groups_ = {{"dp", {"M1", "M2"}, Region::Weak},
                       {"cmp", {"M3", "M4"}, Region::Strong},
                       {"cmo", {"M5", "M6"}, Region::Strong},
                       {"cmn", {"M7", "M8"}, Region::Strong},
                       {"tail", {"M9"}, Region::Strong}};
            break;
        case TopologyKind::TwoStage:
            name_ = "2S-OTA";
            devices_ = {{"M1", "x", "inp", "tail", P::N, "dp"},
                        {"M2", "mid", "inn", "tail", P::N, "dp"},
                        {"M3", "x", "x", "0", P::P, "cm"},
                        {"M4", "mid", "x", "0", P::P, "cm"},
                        {"M5", "tail", "0", "0", P::N, "tail"},
                        {"M6", "out", "mid", "0", P::P, "cs"},
                        {"M7", "out", "0", "0", P::N, "load"}};
            groups_ = {{"dp", {"M1", "M2"}, Region::Weak},
                       {"cm", {"M3", "M4"}, Region::Strong},
                       {"tail", {"M5"}, Region::Strong},
                       {"cs", {"M6"}, Region::Strong},
                       {"load", {"M7"}, Region::Strong}};
            break;
        }
    }

    static Topology from_name(const std::string& name, TopologyConfig cfg = {}) {
        if (name == "5T-OTA" || name == "5T") return Topology(TopologyKind::FiveT, cfg);
        if (name == "CM-OTA" || name == "CM") return Topology(TopologyKind::CurrentMirror, cfg);
        if (name == "2S-OTA" || name == "2S") return Topology(TopologyKind::TwoStage, cfg);
        throw Error(Errc::Usage, "unknown topology " + name + " (5T-OTA, CM-OTA, 2S-OTA)");
    }

    TopologyKind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    const TopologyConfig& config() const { return cfg_; }
    const std::vector<TemplateDevice>& devices() const { return devices_; }
    const std::vector<WidthGroup>& groups() const { return groups_; }
    std::string input() const { return "Vinp"; }
    std::string output() const { return "out"; }

    const TemplateDevice& device(const std::string& name) const {
        for (auto const& d : devices_)
            if (d.name == name) return d;
        throw Error(Errc::OutOfRange, "no device " + name + " in " + name_);
    }

    /// Consistent operating point for the given widths, or nullopt if the
    /// branch currents cannot be balanced inside the supply.
    std::optional<BiasMap> solve_bias(const GroupWidths& w, const ModelSet& models = {}) const {
        const auto& N = models.nmos;
        const auto& P = models.pmos;
        const double vdd = cfg_.vdd, l = cfg_.l;
        auto idn = [&](double vgs, double vds, double width) { return eval_model(N, vgs, std::max(vds, 0.0), l, width).id; };
        auto idp = [&](double vsg, double vsd, double width) { return eval_model(P, vsg, std::max(vsd, 0.0), l, width).id; };
        const double wdp = w.at("dp"), wtail = w.at("tail");
        const double wload = w.at(kind_ == TopologyKind::CurrentMirror ? "cmp" : "cm");

        // First stage: tail voltage t balances the input pair against tail/2;
        // the diode load sets Vx for the resulting branch current.
        auto diode_node = [&](double ibranch) {
            return detail::bisect_decreasing([&](double vx) { return idp(vdd - vx, vdd - vx, wload) - ibranch; }, 0.0, vdd);
        };
        // A tail current the load cannot carry counts as "too much current".
        auto first_stage = [&](double t) {
            const double half = 0.5 * idn(cfg_.vb_tail, t, wtail);
            auto vx = diode_node(half);
            if (!vx) return -half;
            return idn(cfg_.vcm - t, *vx - t, wdp) - half;
        };
        auto t = detail::bisect_decreasing(first_stage, 0.0, cfg_.vcm);
        if (!t) return std::nullopt;
        const double ibr = 0.5 * idn(cfg_.vb_tail, *t, wtail);
        auto vx = diode_node(ibr);
        if (!vx) return std::nullopt;

        BiasMap b;
        auto put = [&](const std::string& dev, double vgs, double vds, double id) { b[dev] = {vgs, vds, id}; };
        const double vin = cfg_.vcm - *t;
        const double vsg_load = vdd - *vx;
        put("M1", vin, *vx - *t, ibr);
        put("M2", vin, *vx - *t, ibr);

        switch (kind_) {
        case TopologyKind::FiveT:
            put("M3", vsg_load, vsg_load, ibr);
            put("M4", vsg_load, vsg_load, ibr);
            put("M5", cfg_.vb_tail, *t, 2 * ibr);
            break;
        case TopologyKind::TwoStage: {
            put("M3", vsg_load, vsg_load, ibr);
            put("M4", vsg_load, vsg_load, ibr);
            put("M5", cfg_.vb_tail, *t, 2 * ibr);
            const double wcs = w.at("cs"), wl = w.at("load");
            auto vo = detail::bisect_decreasing([&](double v) { return idp(vsg_load, vdd - v, wcs) - idn(cfg_.vb_load, v, wl); }, 0.0, vdd);
            if (!vo) return std::nullopt;
            const double i2 = idn(cfg_.vb_load, *vo, wl);
            put("M6", vsg_load, vdd - *vo, i2);
            put("M7", cfg_.vb_load, *vo, i2);
            break;
        }
        case TopologyKind::CurrentMirror: {
            put("M3", vsg_load, vsg_load, ibr);
            put("M4", vsg_load, vsg_load, ibr);
            put("M9", cfg_.vb_tail, *t, 2 * ibr);
            const double wo = w.at("cmo"), wn = w.at("cmn");
            auto vy = detail::bisect_decreasing([&](double v) { return idp(vsg_load, vdd - v, wo) - idn(v, v, wn); }, 0.0, vdd);
            if (!vy) return std::nullopt;
            // Matched mirrors carry equal currents, so the output sits at Vy.
            const double i6 = idn(*vy, *vy, wn);
            put("M5", vsg_load, vdd - *vy, i6);
            put("M6", vsg_load, vdd - *vy, i6);
            put("M7", *vy, *vy, i6);
            put("M8", *vy, *vy, i6);
            break;
        }
        }
        for (auto const& [dev, db] : b)
            if (!(db.vgs >= 0 && db.vgs <= vdd && db.vds >= 0 && db.vds <= vdd && db.id > 0)) return std::nullopt;
        return b;
    }

    /// Small-signal netlist at the given widths and operating point.
    Netlist netlist(const GroupWidths& w, const BiasMap& bias) const {
        Netlist nl;
        nl.name = name_;
        for (auto const& d : devices_)
            nl.elements.push_back({d.name, Mosfet{d.d, d.g, d.s, "0", d.polarity, w.at(d.group), cfg_.l}});
        nl.elements.push_back({"CL", Capacitor{output(), kGround, cfg_.cl}});
        if (kind_ == TopologyKind::TwoStage) nl.elements.push_back({"Cc", Capacitor{"mid", "out", cfg_.cc}});
        nl.elements.push_back({"Vinp", VSource{"inp", kGround}});
        nl.elements.push_back({"Vinn", VSource{"inn", kGround}});
        for (auto const& [dev, db] : bias) nl.bias[dev] = {db.vgs, db.vds};
        return nl;
    }

    /// Widths per device from widths per group.
    std::map<std::string, double> device_widths(const GroupWidths& w) const {
        std::map<std::string, double> out;
        for (auto const& d : devices_) out[d.name] = w.at(d.group);
        return out;
    }

    /// Which group constraints a biased design violates (empty when all hold).
    std::vector<std::string> region_violations(const BiasMap& b, const ModelSet& models = {}) const {
        std::vector<std::string> bad;
        for (auto const& g : groups_) {
            for (auto const& m : g.members) {
                const auto& d = device(m);
                const auto& db = b.at(m);
                const Region r = region_of(models.for_polarity(d.polarity), db.vgs, db.vds, cfg_.l);
                if (r != g.region) {
                    bad.push_back(g.name);
                    break;
                }
            }
        }
        return bad;
    }

private:
    TopologyKind kind_;
    TopologyConfig cfg_;
    std::string name_;
    std::vector<TemplateDevice> devices_;
    std::vector<WidthGroup> groups_;
};

} // namespace otasizer
