#pragma once

// Line-oriented SPICE-subset netlists and their small-signal linearisation.
//
// Grammar (one element or directive per line, '*' starts a comment):
//   M<name> d g s b <N|P> W=<val> L=<val>
//   R<name> n1 n2 <ohms>
//   C<name> n1 n2 <farads>
//   G<name> n+ n- nc+ nc- <gm>      current gm*(V(nc+)-V(nc-)) delivered into n+
//   Gc<name> n1 n2 <siemens>        plain conductance
//   V<name> n+ n- AC
//   I<name> n+ n- AC                unit current delivered into n-
//   .title <name>
//   .bias <device|*> vgs=<v> vds=<v>
//   .spec gain=<dB> bw=<Hz> ugf=<Hz>
//   .end

#include "otasizer/device.hpp"
#include "otasizer/error.hpp"
#include "otasizer/symexpr.hpp"
#include "otasizer/units.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace otasizer {

inline constexpr const char* kGround = "0";

/// Target or measured performance: low-frequency gain, 3 dB bandwidth and
/// unity-gain frequency.
struct SpecTriple {
    double gain_db = 0;
    double bw_hz = 0;
    double ugf_hz = 0;

    friend bool operator==(const SpecTriple&, const SpecTriple&) = default;
};

struct Mosfet {
    std::string d, g, s, b;
    Polarity polarity = Polarity::N;
    double w = 0, l = 0;
    friend bool operator==(const Mosfet&, const Mosfet&) = default;
};
struct Resistor {
    std::string n1, n2;
    double ohms = 0;
    friend bool operator==(const Resistor&, const Resistor&) = default;
};
struct Capacitor {
    std::string n1, n2;
    double farads = 0;
    friend bool operator==(const Capacitor&, const Capacitor&) = default;
};
struct Conductance {
    std::string n1, n2;
    double siemens = 0;
    friend bool operator==(const Conductance&, const Conductance&) = default;
};
struct Vccs {
    std::string out_p, out_n, ctrl_p, ctrl_n;
    double gm = 0;
    friend bool operator==(const Vccs&, const Vccs&) = default;
};
struct VSource {
    std::string n_p, n_n;
    friend bool operator==(const VSource&, const VSource&) = default;
};
struct ISource {
    std::string n_p, n_n;
    friend bool operator==(const ISource&, const ISource&) = default;
};

using ElementKind = std::variant<Mosfet, Resistor, Capacitor, Conductance, Vccs, VSource, ISource>;

struct Element {
    std::string name;
    ElementKind kind;

    std::vector<std::string> nodes() const {
        return std::visit(
            [](auto const& e) -> std::vector<std::string> {
                using T = std::decay_t<decltype(e)>;
                if constexpr (std::is_same_v<T, Mosfet>) return {e.d, e.g, e.s, e.b};
                else if constexpr (std::is_same_v<T, Vccs>) return {e.out_p, e.out_n, e.ctrl_p, e.ctrl_n};
                else if constexpr (std::is_same_v<T, VSource> || std::is_same_v<T, ISource>) return {e.n_p, e.n_n};
                else return {e.n1, e.n2};
            },
            kind);
    }

    friend bool operator==(const Element&, const Element&) = default;
};

struct Bias {
    double vgs = 0, vds = 0;
    friend bool operator==(const Bias&, const Bias&) = default;
};

struct Netlist {
    std::string name;
    std::vector<Element> elements;
    std::map<std::string, Bias> bias;    // device name -> bias
    std::optional<Bias> default_bias;    // `.bias * ...`
    std::optional<SpecTriple> spec;
    std::string ground = kGround;

    const Element* find(const std::string& element) const {
        for (auto const& e : elements)
            if (e.name == element) return &e;
        return nullptr;
    }

    std::vector<std::string> node_names() const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (auto const& e : elements)
            for (auto const& n : e.nodes())
                if (seen.insert(n).second) out.push_back(n);
        return out;
    }

    friend bool operator==(const Netlist&, const Netlist&) = default;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

inline std::string lower_str(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

[[noreturn]] inline void syntax(int line, const std::string& what) {
    throw Error(Errc::SyntaxError, "line " + std::to_string(line) + ": " + what);
}

inline double positive_value(const std::string& tok, int line, const std::string& what) {
    auto v = units::try_parse_value(tok);
    if (!v) syntax(line, "malformed " + what + " '" + tok + "'");
    if (!(*v > 0) || !std::isfinite(*v))
        throw Error(Errc::InvalidElement, "line " + std::to_string(line) + ": " + what + " must be positive");
    return *v;
}

inline std::map<std::string, std::string> key_values(const std::vector<std::string>& toks, std::size_t from, int line) {
    std::map<std::string, std::string> kv;
    for (std::size_t i = from; i < toks.size(); ++i) {
        auto eq = toks[i].find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == toks[i].size()) syntax(line, "expected key=value, got '" + toks[i] + "'");
        kv[lower_str(toks[i].substr(0, eq))] = toks[i].substr(eq + 1);
    }
    return kv;
}

} // namespace detail

inline Netlist parse_netlist(const std::string& text) {
    using detail::syntax;
    Netlist nl;
    std::set<std::string> names;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        auto toks = detail::split_ws(raw);
        if (toks.empty() || toks[0][0] == '*') continue;
        const std::string& head = toks[0];
        const std::string lhead = detail::lower_str(head);

        if (lhead[0] == '.') {
            if (lhead == ".end") break;
            if (lhead == ".title") {
                if (toks.size() != 2) syntax(lineno, ".title takes one name");
                nl.name = toks[1];
            } else if (lhead == ".bias") {
                if (toks.size() < 2) throw Error(Errc::MissingField, "line " + std::to_string(lineno) + ": .bias needs a device");
                auto kv = detail::key_values(toks, 2, lineno);
                if (!kv.count("vgs") || !kv.count("vds"))
                    throw Error(Errc::MissingField, "line " + std::to_string(lineno) + ": .bias needs vgs= and vds=");
                Bias b{std::abs(units::parse_value(kv["vgs"])), std::abs(units::parse_value(kv["vds"]))};
                if (toks[1] == "*") nl.default_bias = b;
                else nl.bias[toks[1]] = b;
            } else if (lhead == ".spec") {
                auto kv = detail::key_values(toks, 1, lineno);
                if (!kv.count("gain") || !kv.count("bw") || !kv.count("ugf"))
                    throw Error(Errc::MissingField, "line " + std::to_string(lineno) + ": .spec needs gain=, bw=, ugf=");
                nl.spec = SpecTriple{units::parse_value(kv["gain"]), units::parse_value(kv["bw"]), units::parse_value(kv["ugf"])};
            } else {
                syntax(lineno, "unknown directive " + head);
            }
            continue;
        }

        auto need = [&](std::size_t n, const char* form) {
            if (toks.size() < n) throw Error(Errc::MissingField, "line " + std::to_string(lineno) + ": expected " + form);
        };
        auto two_terminal = [&](const std::string& a, const std::string& b) {
            if (a == b) throw Error(Errc::InvalidElement, "line " + std::to_string(lineno) + ": " + head + " has both terminals on " + a);
        };

        Element el{head, {}};
        const char p = static_cast<char>(std::toupper(static_cast<unsigned char>(head[0])));
        if (p == 'M') {
            need(8, "M<name> d g s b <N|P> W=<val> L=<val>");
            Mosfet m{toks[1], toks[2], toks[3], toks[4]};
            const std::string pol = detail::lower_str(toks[5]);
            if (pol == "n" || pol == "nmos") m.polarity = Polarity::N;
            else if (pol == "p" || pol == "pmos") m.polarity = Polarity::P;
            else syntax(lineno, "polarity must be N or P");
            auto kv = detail::key_values(toks, 6, lineno);
            if (!kv.count("w") || !kv.count("l")) throw Error(Errc::MissingField, "line " + std::to_string(lineno) + ": MOSFET needs W= and L=");
            m.w = detail::positive_value(kv["w"], lineno, "W");
            m.l = detail::positive_value(kv["l"], lineno, "L");
            el.kind = m;
        } else if (p == 'R') {
            need(4, "R<name> n1 n2 <val>");
            if (toks.size() > 4) syntax(lineno, "trailing fields after resistor value");
            two_terminal(toks[1], toks[2]);
            el.kind = Resistor{toks[1], toks[2], detail::positive_value(toks[3], lineno, "resistance")};
        } else if (p == 'C') {
            need(4, "C<name> n1 n2 <val>");
            if (toks.size() > 4) syntax(lineno, "trailing fields after capacitor value");
            two_terminal(toks[1], toks[2]);
            el.kind = Capacitor{toks[1], toks[2], detail::positive_value(toks[3], lineno, "capacitance")};
        } else if (p == 'G') {
            const bool conductance = head.size() >= 2 && head[1] == 'c' && toks.size() == 4;
            if (conductance) {
                two_terminal(toks[1], toks[2]);
                el.kind = Conductance{toks[1], toks[2], detail::positive_value(toks[3], lineno, "conductance")};
            } else {
                need(6, "G<name> n+ n- nc+ nc- <gm>");
                if (toks.size() > 6) syntax(lineno, "trailing fields after VCCS value");
                el.kind = Vccs{toks[1], toks[2], toks[3], toks[4], detail::positive_value(toks[5], lineno, "gm")};
            }
        } else if (p == 'V' || p == 'I') {
            need(4, "<V|I><name> n+ n- AC");
            if (detail::lower_str(toks[3]) != "ac" || toks.size() > 4) syntax(lineno, "sources must be 'AC'");
            two_terminal(toks[1], toks[2]);
            if (p == 'V') el.kind = VSource{toks[1], toks[2]};
            else el.kind = ISource{toks[1], toks[2]};
        } else {
            throw Error(Errc::UnknownElement, "line " + std::to_string(lineno) + ": unknown element prefix in '" + head + "'");
        }
        if (!names.insert(head).second)
            throw Error(Errc::DuplicateElement, "line " + std::to_string(lineno) + ": " + head);
        nl.elements.push_back(std::move(el));
    }
    for (auto const& e : nl.elements) {
        if (std::holds_alternative<Mosfet>(e.kind) && !nl.bias.count(e.name) && !nl.default_bias)
            throw Error(Errc::MissingBias, "no .bias for " + e.name);
    }
    return nl;
}

/// Renders a netlist in the grammar accepted by parse_netlist, with values
/// in shortest round-trip form.
inline std::string print_netlist(const Netlist& nl) {
    std::ostringstream os;
    if (!nl.name.empty()) os << ".title " << nl.name << '\n';
    for (auto const& e : nl.elements) {
        os << e.name;
        std::visit(
            [&](auto const& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, Mosfet>)
                    os << ' ' << x.d << ' ' << x.g << ' ' << x.s << ' ' << x.b << ' ' << polarity_char(x.polarity)
                       << " W=" << units::exact(x.w) << " L=" << units::exact(x.l);
                else if constexpr (std::is_same_v<T, Resistor>)
                    os << ' ' << x.n1 << ' ' << x.n2 << ' ' << units::exact(x.ohms);
                else if constexpr (std::is_same_v<T, Capacitor>)
                    os << ' ' << x.n1 << ' ' << x.n2 << ' ' << units::exact(x.farads);
                else if constexpr (std::is_same_v<T, Conductance>)
                    os << ' ' << x.n1 << ' ' << x.n2 << ' ' << units::exact(x.siemens);
                else if constexpr (std::is_same_v<T, Vccs>)
                    os << ' ' << x.out_p << ' ' << x.out_n << ' ' << x.ctrl_p << ' ' << x.ctrl_n << ' ' << units::exact(x.gm);
                else
                    os << ' ' << x.n_p << ' ' << x.n_n << " AC";
            },
            e.kind);
        os << '\n';
    }
    if (nl.default_bias)
        os << ".bias * vgs=" << units::exact(nl.default_bias->vgs) << " vds=" << units::exact(nl.default_bias->vds) << '\n';
    for (auto const& [dev, b] : nl.bias)
        os << ".bias " << dev << " vgs=" << units::exact(b.vgs) << " vds=" << units::exact(b.vds) << '\n';
    if (nl.spec)
        os << ".spec gain=" << units::exact(nl.spec->gain_db) << " bw=" << units::exact(nl.spec->bw_hz)
           << " ugf=" << units::exact(nl.spec->ugf_hz) << '\n';
    os << ".end\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Small-signal circuit

struct SsAdmittance {
    std::string n1, n2;
    AdmittanceExpr y;
    std::string origin; // element that produced it
};

struct SsVccs {
    std::string out_p, out_n, ctrl_p, ctrl_n;
    std::string param;
    std::string origin;
};

struct SsSource {
    std::string name;
    bool voltage = true;
    std::string n_p, n_n;
};

/// The four small-signal parameter names of one transistor.
struct DeviceParams {
    std::string gm, gds, cds, cgs;
    Polarity polarity = Polarity::N;
};

struct SmallSignalCircuit {
    std::vector<std::string> nodes; // excludes ground
    std::vector<SsAdmittance> admittances;
    std::vector<SsVccs> vccs;
    std::vector<SsSource> sources;
    Bindings bindings;
    std::map<std::string, DeviceParams> device_index;

    std::size_t element_count() const { return admittances.size() + vccs.size() + sources.size(); }

    const SsSource* source(const std::string& name) const {
        for (auto const& s : sources)
            if (s.name == name) return &s;
        return nullptr;
    }
};

/// Parameter naming used in symbolic expressions.
namespace param_name {
inline std::string gm(const std::string& dev) { return "gm" + dev; }
inline std::string gds(const std::string& dev) { return "gds" + dev; }
inline std::string cgs(const std::string& dev) { return "Cgs" + dev; }
inline std::string cds(const std::string& dev) { return "Cds" + dev; }
inline std::string resistor(const std::string& el) { return "G" + el; }
inline std::string capacitor(const std::string& el) { return el; }
// "Gcgds" -> "gds", "GcG" -> "G"; purely numeric suffixes keep the element name ("Gc1").
inline std::string strip_prefix(const std::string& el, std::size_t n) {
    if (el.size() <= n || std::isdigit(static_cast<unsigned char>(el[n]))) return el;
    return el.substr(n);
}
inline std::string conductance(const std::string& el) { return strip_prefix(el, 2); }
inline std::string vccs(const std::string& el) { return strip_prefix(el, 1); }
} // namespace param_name

struct ModelSet {
    DeviceModel nmos = DeviceModel::nmos();
    DeviceModel pmos = DeviceModel::pmos();
    const DeviceModel& for_polarity(Polarity p) const { return p == Polarity::N ? nmos : pmos; }
};

/// Replaces every MOSFET by gm (VCCS, gate-source control, current delivered
/// into the source and drawn from the drain), gds and Cds across drain-source
/// and Cgs across gate-source, evaluated at its `.bias` point. Passives and
/// sources are copied through; elements shorted by ground on both ends stay
/// in the list and contribute nothing when stamped.
inline SmallSignalCircuit linearize(const Netlist& nl, const ModelSet& models = {}) {
    SmallSignalCircuit c;
    for (auto const& n : nl.node_names())
        if (n != nl.ground) c.nodes.push_back(n);

    auto bind = [&](const std::string& p, double v, const std::string& el) {
        if (!std::isfinite(v) || v < 0) throw Error(Errc::NonFiniteValue, "parameter " + p + " of " + el);
        if (!c.bindings.emplace(p, v).second) throw Error(Errc::DuplicateParameter, p + " (from " + el + ")");
    };

    for (auto const& e : nl.elements) {
        std::visit(
            [&](auto const& x) {
                using T = std::decay_t<decltype(x)>;
                if constexpr (std::is_same_v<T, Mosfet>) {
                    auto it = nl.bias.find(e.name);
                    const Bias b = it != nl.bias.end() ? it->second : *nl.default_bias;
                    const DeviceModel& m = models.for_polarity(x.polarity);
                    DeviceOutputs o;
                    try {
                        o = eval_model(m, b.vgs, b.vds, x.l, x.w);
                    } catch (const Error& err) {
                        throw Error(Errc::BiasOutOfRange, e.name + ": " + err.what());
                    }
                    DeviceParams dp{param_name::gm(e.name), param_name::gds(e.name), param_name::cds(e.name),
                                    param_name::cgs(e.name), x.polarity};
                    bind(dp.gm, o.gm, e.name);
                    bind(dp.gds, o.gds, e.name);
                    bind(dp.cds, o.cds, e.name);
                    bind(dp.cgs, o.cgs, e.name);
                    c.vccs.push_back({x.s, x.d, x.g, x.s, dp.gm, e.name});
                    c.admittances.push_back({x.d, x.s, AdmittanceExpr::term(dp.gds), e.name});
                    c.admittances.push_back({x.g, x.s, AdmittanceExpr::term(dp.cgs, 1), e.name});
                    c.admittances.push_back({x.d, x.s, AdmittanceExpr::term(dp.cds, 1), e.name});
                    c.device_index[e.name] = dp;
                } else if constexpr (std::is_same_v<T, Resistor>) {
                    const auto p = param_name::resistor(e.name);
                    bind(p, 1.0 / x.ohms, e.name);
                    c.admittances.push_back({x.n1, x.n2, AdmittanceExpr::term(p), e.name});
                } else if constexpr (std::is_same_v<T, Capacitor>) {
                    const auto p = param_name::capacitor(e.name);
                    bind(p, x.farads, e.name);
                    c.admittances.push_back({x.n1, x.n2, AdmittanceExpr::term(p, 1), e.name});
                } else if constexpr (std::is_same_v<T, Conductance>) {
                    const auto p = param_name::conductance(e.name);
                    bind(p, x.siemens, e.name);
                    c.admittances.push_back({x.n1, x.n2, AdmittanceExpr::term(p), e.name});
                } else if constexpr (std::is_same_v<T, Vccs>) {
                    const auto p = param_name::vccs(e.name);
                    bind(p, x.gm, e.name);
                    c.vccs.push_back({x.out_p, x.out_n, x.ctrl_p, x.ctrl_n, p, e.name});
                } else if constexpr (std::is_same_v<T, VSource>) {
                    c.sources.push_back({e.name, true, x.n_p, x.n_n});
                } else {
                    c.sources.push_back({e.name, false, x.n_p, x.n_n});
                }
            },
            e.kind);
    }
    return c;
}

} // namespace otasizer
