#pragma once

// Labelled dataset generation: width sweeps over a topology, bias solve,
// region and spec-window filtering, AC measurement and path serialization.

#include "otasizer/acengine.hpp"
#include "otasizer/device.hpp"
#include "otasizer/dpsfg.hpp"
#include "otasizer/error.hpp"
#include "otasizer/hash.hpp"
#include "otasizer/netlist.hpp"
#include "otasizer/parallel.hpp"
#include "otasizer/shuffle.hpp"
#include "otasizer/topology.hpp"
#include "otasizer/units.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace otasizer {

struct SpecWindow {
    double gain_min = -1e9, gain_max = 1e9; // dB
    double bw_min = 0, bw_max = 1e18;       // Hz
    double ugf_min = 0, ugf_max = 1e18;     // Hz

    bool contains(const SpecTriple& s) const {
        return s.gain_db >= gain_min && s.gain_db <= gain_max && s.bw_hz >= bw_min && s.bw_hz <= bw_max &&
               s.ugf_hz >= ugf_min && s.ugf_hz <= ugf_max;
    }
};

/// Desk-scale windows for the built-in device model.
inline SpecWindow default_window(TopologyKind k) {
    switch (k) {
    case TopologyKind::FiveT: return {18.0, 24.0, 2e6, 100e6, 30e6, 1e9};
    case TopologyKind::CurrentMirror: return {16.0, 26.0, 5e6, 500e6, 50e6, 3e9};
    case TopologyKind::TwoStage: return {15.0, 40.0, 5e5, 100e6, 10e6, 1e9};
    }
    return {};
}

/// Grid points per width group; the 5T grid is denser since it has only three groups.
inline int default_points(TopologyKind k) { return k == TopologyKind::FiveT ? 40 : 10; }

inline std::size_t default_target(TopologyKind) { return 2000; }

struct DatagenConfig {
    int points_per_group = 32;
    double w_min = 0.7e-6, w_max = 50e-6;
    std::size_t target = 2000; // 0 keeps every surviving design
    std::uint64_t seed = 1;
    SpecWindow window;
};

struct DeviceValues {
    double gm = 0, gds = 0, cds = 0, cgs = 0, id = 0;
    friend bool operator==(const DeviceValues&, const DeviceValues&) = default;
};

struct DatasetRecord {
    std::string topology;
    GroupWidths widths;
    std::map<std::string, DeviceValues> params;
    BiasMap bias;
    SpecTriple metrics;
    std::vector<std::string> encoder; // one line per path plus the device-values line
    std::vector<std::string> decoder;
};

struct Rejections {
    std::size_t bias = 0, region = 0, response = 0, window = 0;
};

struct Dataset {
    std::vector<DatasetRecord> records;
    std::size_t evaluated = 0;
    Rejections rejected;
};

inline std::vector<double> log_grid(double lo, double hi, int n) {
    if (n <= 1) return {lo};
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
    g.back() = hi;
    return g;
}

/// Turns circuits of one topology into path sequences. The graph structure
/// is fixed by the topology; only parameter values change between designs.
class SequenceBuilder {
public:
    SequenceBuilder(const Topology& t, const SmallSignalCircuit& sample)
        : graph_(build_dpsfg(sample, t.input(), t.output())), paths_(enumerate_paths(graph_)) {
        for (auto const& [dev, dp] : sample.device_index) {
            kinds_[dp.gm] = {dev, units::Quantity::Siemens};
            kinds_[dp.gds] = {dev, units::Quantity::Siemens};
            kinds_[dp.cds] = {dev, units::Quantity::Farad};
            kinds_[dp.cgs] = {dev, units::Quantity::Farad};
        }
        std::set<std::string> seen;
        for (auto const& h : graph_.collapsed()) {
            for (auto const& p : h.weight.numerator.params()) seen.insert(p);
            for (auto const& p : h.weight.denominator.params()) seen.insert(p);
        }
        for (auto const& d : t.devices()) dv_params_.push_back("Id" + d.name);
        for (auto const& d : t.devices()) {
            const auto& dp = sample.device_index.at(d.name);
            for (auto const& p : {dp.gm, dp.gds, dp.cds, dp.cgs})
                if (!seen.count(p)) dv_params_.push_back(p);
        }
        templates();
    }

    const DpSfg& graph() const { return graph_; }
    const PathSet& paths() const { return paths_; }
    const std::vector<std::string>& dv_params() const { return dv_params_; }

    /// Device owning a parameter and its quantity, if it is a device parameter.
    std::optional<std::pair<std::string, units::Quantity>> classify(const std::string& param) const {
        if (auto it = kinds_.find(param); it != kinds_.end()) return it->second;
        if (param.rfind("Id", 0) == 0) return std::pair{param.substr(2), units::Quantity::Ampere};
        return std::nullopt;
    }

    std::vector<std::string> encoder(const SpecTriple& spec) const {
        auto lines = serialize_paths(graph_, paths_, spec);
        std::string dv = "DV";
        for (auto const& p : dv_params_) dv += " " + p;
        lines.push_back(dv + spec_suffix(spec));
        return lines;
    }

    /// Valued sequences: device parameters become "<value><unit><device>".
    std::vector<std::string> decoder(const Bindings& b, const std::map<std::string, double>& ids) const {
        auto render = [&](const std::string& p) -> std::string {
            auto k = classify(p);
            if (!k) return p;
            const double v = k->second == units::Quantity::Ampere ? ids.at(k->first) : b.at(p);
            return units::engineering(v, k->second) + k->first;
        };
        auto lines = serialize_paths(graph_, paths_, std::nullopt, render);
        std::string dv = "DV";
        for (auto const& p : dv_params_) dv += " " + render(p);
        lines.push_back(dv);
        return lines;
    }

    /// Valued decoder lines back to parameter values. Lines are matched
    /// against the symbolic structure; every occurrence of a parameter is
    /// collected. Throws MalformedOutput on any structural mismatch.
    std::map<std::string, std::vector<double>> parse_decoder(const std::vector<std::string>& lines) const {
        const auto& tpl = templates();
        if (lines.size() != tpl.size())
            throw Error(Errc::MalformedOutput, "expected " + std::to_string(tpl.size()) + " lines, got " + std::to_string(lines.size()));
        std::map<std::string, std::vector<double>> out;
        for (std::size_t i = 0; i < lines.size(); ++i) parse_line(tpl[i], lines[i], out);
        return out;
    }

    std::map<std::string, std::vector<double>> parse_decoder_line(std::size_t index, const std::string& line) const {
        std::map<std::string, std::vector<double>> out;
        parse_line(templates().at(index), line, out);
        return out;
    }

private:
    struct LineTemplate {
        std::vector<std::string> literals; // one more than params
        std::vector<std::string> params;
    };

    const std::vector<LineTemplate>& templates() const {
        if (!templates_.empty()) return templates_;
        std::vector<std::vector<std::string>> order;
        std::vector<std::string> current;
        auto mark = [&](const std::string& p) -> std::string {
            if (!classify(p)) return p;
            current.push_back(p);
            return "\x01";
        };
        std::vector<std::string> lines;
        const auto hops = graph_.collapsed();
        auto take = [&](std::string text) {
            lines.push_back(std::move(text));
            order.push_back(std::move(current));
            current.clear();
        };
        for (auto const& p : paths_.forward_paths) take(serialize_walk(graph_, hops, p, false, mark));
        for (auto const& c : paths_.cycles) take(serialize_walk(graph_, hops, c, true, mark));
        std::string dv = "DV";
        for (auto const& p : dv_params_) dv += " " + mark(p);
        take(dv);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            LineTemplate t;
            t.params = order[i];
            std::size_t start = 0;
            for (;;) {
                const auto at = lines[i].find('\x01', start);
                t.literals.push_back(lines[i].substr(start, at == std::string::npos ? std::string::npos : at - start));
                if (at == std::string::npos) break;
                start = at + 1;
            }
            if (t.literals.size() != t.params.size() + 1) throw Error(Errc::BadFormat, "template placeholder count mismatch");
            templates_.push_back(std::move(t));
        }
        return templates_;
    }

    void parse_line(const LineTemplate& t, const std::string& line, std::map<std::string, std::vector<double>>& out) const {
        auto bad = [&](const std::string& why) { return Error(Errc::MalformedOutput, why + " in \"" + line + "\""); };
        std::size_t pos = 0;
        for (std::size_t k = 0; k < t.literals.size(); ++k) {
            const auto& lit = t.literals[k];
            if (line.compare(pos, lit.size(), lit) != 0) throw bad("structure mismatch at column " + std::to_string(pos));
            pos += lit.size();
            if (k == t.params.size()) break;
            const auto& param = t.params[k];
            const auto kind = *classify(param);
            std::size_t end = pos;
            while (end < line.size() && is_numeric_char(line[end])) ++end;
            double mag = 0;
            const auto res = std::from_chars(line.data() + pos, line.data() + end, mag);
            if (end == pos || res.ec != std::errc{} || res.ptr != line.data() + end) throw bad("bad number for " + param);
            if (end + 2 > line.size()) throw bad("missing unit for " + param);
            const auto unit = units::unit_scale(std::string_view(line).substr(end, 2));
            if (!unit || unit->second != kind.second) throw bad("wrong unit for " + param);
            pos = end + 2;
            if (line.compare(pos, kind.first.size(), kind.first) != 0) throw bad("device name mismatch for " + param);
            pos += kind.first.size();
            if (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) throw bad("device name mismatch for " + param);
            out[param].push_back(mag * unit->first);
        }
        if (pos != line.size()) throw bad("trailing text");
    }

    static bool is_numeric_char(char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '.'; }

    DpSfg graph_;
    PathSet paths_;
    std::map<std::string, std::pair<std::string, units::Quantity>> kinds_;
    std::vector<std::string> dv_params_;
    mutable std::vector<LineTemplate> templates_;
};

/// Outcome of evaluating one design point.
struct DesignEval {
    enum class Status { Ok, Bias, Region, Response } status = Status::Ok;
    BiasMap bias;
    SmallSignalCircuit circuit;
    SpecTriple metrics;
};

inline DesignEval evaluate_design(const Topology& t, const GroupWidths& w, const ModelSet& models = {},
                                  bool check_regions = true) {
    DesignEval e;
    auto b = t.solve_bias(w, models);
    if (!b) {
        e.status = DesignEval::Status::Bias;
        return e;
    }
    e.bias = *b;
    if (check_regions && !t.region_violations(*b, models).empty()) {
        e.status = DesignEval::Status::Region;
        return e;
    }
    e.circuit = linearize(t.netlist(w, *b), models);
    auto m = measure(e.circuit, t.input(), t.output()).metrics;
    if (!m.complete()) {
        e.status = DesignEval::Status::Response;
        return e;
    }
    e.metrics = m.spec();
    return e;
}

inline std::map<std::string, double> device_currents(const Topology& t, const GroupWidths& w, const BiasMap& b,
                                                     const ModelSet& models = {}) {
    std::map<std::string, double> ids;
    for (auto const& d : t.devices()) {
        const auto& db = b.at(d.name);
        ids[d.name] = eval_model(models.for_polarity(d.polarity), db.vgs, db.vds, t.config().l, w.at(d.group)).id;
    }
    return ids;
}

/// A circuit of the topology at a mid-grid design, used to fix the graph structure.
inline SmallSignalCircuit reference_circuit(const Topology& t, const ModelSet& models = {}) {
    GroupWidths w;
    for (auto const& g : t.groups()) w[g.name] = 5e-6;
    auto b = t.solve_bias(w, models);
    BiasMap bias;
    if (b) {
        bias = *b;
    } else {
        for (auto const& d : t.devices()) bias[d.name] = {0.6, 0.6, 0};
    }
    return linearize(t.netlist(w, bias), models);
}

inline Dataset sweep(const Topology& t, const DatagenConfig& cfg, const ModelSet& models = {}) {
    const auto grid = log_grid(cfg.w_min, cfg.w_max, cfg.points_per_group);
    const std::size_t ng = t.groups().size();
    std::size_t total = 1;
    for (std::size_t i = 0; i < ng; ++i) total *= grid.size();

    std::vector<DesignEval> evals(total);
    std::vector<GroupWidths> widths(total);
    std::vector<char> in_window(total, 0);
    parallel_for(total, [&](std::size_t idx) {
        GroupWidths w;
        std::size_t rest = idx;
        for (std::size_t g = ng; g-- > 0;) {
            w[t.groups()[g].name] = grid[rest % grid.size()];
            rest /= grid.size();
        }
        widths[idx] = w;
        evals[idx] = evaluate_design(t, w, models);
        if (evals[idx].status == DesignEval::Status::Ok) in_window[idx] = cfg.window.contains(evals[idx].metrics);
    });

    Dataset ds;
    ds.evaluated = total;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < total; ++i) {
        switch (evals[i].status) {
        case DesignEval::Status::Bias: ++ds.rejected.bias; break;
        case DesignEval::Status::Region: ++ds.rejected.region; break;
        case DesignEval::Status::Response: ++ds.rejected.response; break;
        case DesignEval::Status::Ok:
            if (in_window[i]) keep.push_back(i);
            else ++ds.rejected.window;
            break;
        }
    }
    if (keep.empty())
        throw Error(Errc::EmptyDataset, "no design survived: bias " + std::to_string(ds.rejected.bias) + ", region " +
                                            std::to_string(ds.rejected.region) + ", response " + std::to_string(ds.rejected.response) +
                                            ", window " + std::to_string(ds.rejected.window));
    if (cfg.target > 0 && keep.size() > cfg.target) {
        seeded_shuffle(keep, cfg.seed);
        keep.resize(cfg.target);
        std::sort(keep.begin(), keep.end());
    }

    const SequenceBuilder seq(t, evals[keep.front()].circuit);
    ds.records.resize(keep.size());
    parallel_for(keep.size(), [&](std::size_t k) {
        const std::size_t i = keep[k];
        const auto& e = evals[i];
        DatasetRecord r;
        r.topology = t.name();
        r.widths = widths[i];
        r.bias = e.bias;
        r.metrics = e.metrics;
        const auto ids = device_currents(t, widths[i], e.bias, models);
        for (auto const& [dev, dp] : e.circuit.device_index)
            r.params[dev] = {e.circuit.bindings.at(dp.gm), e.circuit.bindings.at(dp.gds), e.circuit.bindings.at(dp.cds),
                             e.circuit.bindings.at(dp.cgs), ids.at(dev)};
        r.encoder = seq.encoder(r.metrics);
        r.decoder = seq.decoder(e.circuit.bindings, ids);
        ds.records[k] = std::move(r);
    });
    return ds;
}

// ---------------------------------------------------------------------------
// JSON I/O. A record's sequences are stored as one string, one path per line.

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? "\n" : "") + lines[i];
    return out;
}

inline std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto nl = s.find('\n', start);
        if (nl == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

inline nlohmann::json to_json(const SpecTriple& s) {
    return {{"gain_db", s.gain_db}, {"bw_hz", s.bw_hz}, {"ugf_hz", s.ugf_hz}};
}

inline SpecTriple spec_from_json(const nlohmann::json& j) {
    return {j.at("gain_db").get<double>(), j.at("bw_hz").get<double>(), j.at("ugf_hz").get<double>()};
}

inline nlohmann::json to_json(const DatasetRecord& r) {
    nlohmann::json j;
    j["topology"] = r.topology;
    j["widths"] = r.widths;
    for (auto const& [dev, v] : r.params)
        j["params"][dev] = {{"gm", v.gm}, {"gds", v.gds}, {"cds", v.cds}, {"cgs", v.cgs}, {"id", v.id}};
    for (auto const& [dev, b] : r.bias) j["bias"][dev] = {{"vgs", b.vgs}, {"vds", b.vds}};
    j["metrics"] = to_json(r.metrics);
    j["encoder_seq"] = join_lines(r.encoder);
    j["decoder_seq"] = join_lines(r.decoder);
    return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    r.topology = j.at("topology");
    r.widths = j.at("widths").get<GroupWidths>();
    for (auto const& [dev, v] : j.at("params").items())
        r.params[dev] = {v.at("gm"), v.at("gds"), v.at("cds"), v.at("cgs"), v.at("id")};
    for (auto const& [dev, b] : j.at("bias").items()) r.bias[dev] = {b.at("vgs"), b.at("vds"), r.params.count(dev) ? r.params[dev].id : 0.0};
    r.metrics = spec_from_json(j.at("metrics"));
    r.encoder = split_lines(j.at("encoder_seq").get<std::string>());
    r.decoder = split_lines(j.at("decoder_seq").get<std::string>());
    return r;
}

inline std::string to_jsonl(const std::vector<DatasetRecord>& recs) {
    std::string out;
    for (auto const& r : recs) out += to_json(r).dump() + "\n";
    return out;
}

inline std::vector<DatasetRecord> read_jsonl(std::istream& in) {
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(record_from_json(nlohmann::json::parse(line)));
    return out;
}

inline nlohmann::json to_json(const SpecWindow& w) {
    return {{"gain_db", {w.gain_min, w.gain_max}}, {"bw_hz", {w.bw_min, w.bw_max}}, {"ugf_hz", {w.ugf_min, w.ugf_max}}};
}

inline nlohmann::json manifest(const Topology& t, const DatagenConfig& cfg, const Dataset& ds, const ModelSet& models) {
    nlohmann::json j;
    j["topology"] = t.name();
    j["groups"] = nlohmann::json::array();
    for (auto const& g : t.groups()) j["groups"].push_back({{"name", g.name}, {"members", g.members}, {"region", region_name(g.region)}});
    j["grid"] = {{"points_per_group", cfg.points_per_group}, {"w_min_m", cfg.w_min}, {"w_max_m", cfg.w_max}, {"spacing", "log"}};
    j["window"] = to_json(cfg.window);
    j["seed"] = cfg.seed;
    j["target"] = cfg.target;
    const auto& tc = t.config();
    j["template"] = {{"vdd", tc.vdd}, {"vcm", tc.vcm}, {"vb_tail", tc.vb_tail}, {"vb_load", tc.vb_load}, {"l_m", tc.l}, {"cl_f", tc.cl}, {"cc_f", tc.cc}};
    j["model_hash"] = hash_text(to_json(models.nmos).dump() + to_json(models.pmos).dump());
    j["evaluated"] = ds.evaluated;
    j["rejected"] = {{"bias", ds.rejected.bias}, {"region", ds.rejected.region}, {"response", ds.rejected.response}, {"window", ds.rejected.window}};
    j["records"] = ds.records.size();
    return j;
}

} // namespace otasizer
