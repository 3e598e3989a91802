#pragma once

// Width estimation from predicted small-signal parameters, and the
// spec-tightening verification loop around the sequence model.

#include "otasizer/acengine.hpp"
#include "otasizer/checkpoint.hpp"
#include "otasizer/datagen.hpp"
#include "otasizer/device.hpp"
#include "otasizer/error.hpp"
#include "otasizer/topology.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace otasizer {

struct PredictedParams {
    double gm = 0, gds = 0, cds = 0, cgs = 0, id = 0;

    bool valid() const {
        for (double v : {gm, gds, cds, cgs, id})
            if (!(std::isfinite(v) && v > 0)) return false;
        return true;
    }
};

struct EstimateConfig {
    double alpha = 1e-4;
    double eps = 1e-8;
    int max_iter = 200;
    double vdd = 1.2;
    int refine = 10;        // Vds search points per LUT interval
    bool include_w5 = false; // add |w5 - wn| terms to the cost
};

struct WidthEstimate {
    double width = 0;
    double vds_star = 0; // argmin of the cost at the last iteration
    double vds_curr = 0; // nudged operating point after the last update
    double vgs = 0;
    double cost = 0;
    int iterations = 0;
    bool converged = true; // false: max_iter reached with |delta| > eps
};

inline constexpr double kMinWidth = 0.1e-6, kMaxWidth = 200e-6;

struct LutSet {
    DeviceLut nmos, pmos;

    static LutSet build(const ModelSet& m = {}, const LutGridConfig& g = {}) { return {build_lut(m.nmos, g), build_lut(m.pmos, g)}; }
    const DeviceLut& for_polarity(Polarity p) const { return p == Polarity::N ? nmos : pmos; }
};

/// Width estimation by the gm/Id method, following the published pseudocode:
/// the Vgs matching gm/Id is found at the current Vds, the candidate widths
/// w1..w4 disagree least at the cost minimum over Vds, and Vds is nudged by
/// sgn(delta)·alpha·Vds_prev until the minimum cost stops changing.
inline WidthEstimate estimate_width(const PredictedParams& p, const DeviceLut& lut, double l, const EstimateConfig& cfg = {}) {
    if (!p.valid()) throw Error(Errc::NonFiniteValue, "predicted parameters must be positive and finite");
    if (!(cfg.alpha > 0 && cfg.eps > 0)) throw Error(Errc::OutOfRange, "alpha and eps must be positive");
    const double gm_id = p.gm / p.id;

    const auto& knots = lut.vds_grid();
    std::vector<double> fine;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i)
        for (int k = 0; k < cfg.refine; ++k) fine.push_back(knots[i] + (knots[i + 1] - knots[i]) * k / cfg.refine);
    fine.push_back(knots.back());

    WidthEstimate r;
    double vds_curr = std::clamp(cfg.vdd / 2, knots.front(), knots.back());
    double prev_min = std::numeric_limits<double>::infinity();
    double delta = std::numeric_limits<double>::infinity();
    while (std::abs(delta) > cfg.eps && r.iterations < cfg.max_iter) {
        double vgs = 0;
        try {
            vgs = find_vgs_for_gmid(lut, gm_id, vds_curr, l);
        } catch (const Error& e) {
            if (e.kind() != Errc::TargetOutOfRange) throw;
            throw Error(Errc::GmIdOutOfRange, e.what());
        }
        const auto prof = lut.vds_profile(vgs, l);
        double best = std::numeric_limits<double>::infinity(), best_vds = fine.front(), best_w1 = 0;
        for (double vds : fine) {
            const DeviceOutputs o = prof(vds);
            const double w[5] = {p.gm / o.gm, p.gds / o.gds, p.cds / o.cds, p.cgs / o.cgs, p.id / o.id};
            const int n = cfg.include_w5 ? 5 : 4;
            double cost = 0;
            for (int a = 0; a < n - 1; ++a)
                for (int b = a + 1; b < n; ++b) cost += std::abs(w[a] - w[b]);
            if (cost < best) {
                best = cost;
                best_vds = vds;
                best_w1 = w[0];
            }
        }
        delta = prev_min - best;
        prev_min = best;
        const double vds_prev = vds_curr;
        const double sgn = delta > 0 ? 1.0 : (delta < 0 ? -1.0 : 0.0);
        vds_curr = std::clamp(vds_curr + sgn * cfg.alpha * vds_prev, knots.front(), knots.back());
        ++r.iterations;
        r.width = best_w1;
        r.vds_star = best_vds;
        r.vds_curr = vds_curr;
        r.vgs = vgs;
        r.cost = best;
    }
    r.converged = std::abs(delta) <= cfg.eps;
    return r;
}

// ---------------------------------------------------------------------------
// Copilot loop

enum class SizingStatus { MetOnFirstPass, MetAfterCopilot, Failed };

inline std::string status_name(SizingStatus s, int k) {
    switch (s) {
    case SizingStatus::MetOnFirstPass: return "MetOnFirstPass";
    case SizingStatus::MetAfterCopilot: return "MetAfterCopilot(" + std::to_string(k) + ")";
    case SizingStatus::Failed: return "Failed";
    }
    return "";
}

struct SizingConfig {
    int copilot_iters = 5;
    double min_tighten = 0.02;  // floor on the per-iteration relative tightening
    double retry_bump = 0.01;   // spec perturbation for a malformed model output
    EstimateConfig estimate;
};

struct SizingResult {
    std::map<std::string, double> widths; // per device
    std::map<std::string, double> vds;    // Vds* per device
    std::map<std::string, WidthEstimate> estimates;
    std::map<std::string, PredictedParams> predicted;
    int iterations = 0;     // copilot iterations after the first pass
    double final_cost = 0;  // sum of per-device final costs
    std::optional<SpecTriple> verified;
    SizingStatus status = SizingStatus::Failed;
    std::vector<SpecTriple> spec_history;
    std::vector<std::string> diagnostics;
};

/// All three metrics at least as good as the target.
inline bool meets(const SpecTriple& got, const SpecTriple& want) {
    return got.gain_db >= want.gain_db && got.bw_hz >= want.bw_hz && got.ugf_hz >= want.ugf_hz;
}

/// Tightened spec: each metric that fell short of `target` is raised by its
/// relative shortfall, with a floor of `floor`.
inline SpecTriple tighten(const SpecTriple& current, const SpecTriple& target, const std::optional<SpecTriple>& got, double floor) {
    auto bump = [&](double cur, double want, std::optional<double> have) {
        if (have && *have >= want) return cur;
        double delta = have ? (want - *have) / std::abs(want) : floor;
        if (!std::isfinite(delta)) delta = floor;
        return cur * (1.0 + std::max(delta, floor)) ;
    };
    SpecTriple s = current;
    s.gain_db = bump(current.gain_db, target.gain_db, got ? std::optional(got->gain_db) : std::nullopt);
    s.bw_hz = bump(current.bw_hz, target.bw_hz, got ? std::optional(got->bw_hz) : std::nullopt);
    s.ugf_hz = bump(current.ugf_hz, target.ugf_hz, got ? std::optional(got->ugf_hz) : std::nullopt);
    return s;
}

inline SpecTriple scaled(const SpecTriple& s, double f) { return {s.gain_db * f, s.bw_hz * f, s.ugf_hz * f}; }

/// Averages every collected occurrence into per-device parameters.
inline std::map<std::string, PredictedParams> collect_params(const SequenceBuilder& seq, const Topology& t,
                                                             const std::map<std::string, std::vector<double>>& values) {
    std::map<std::string, PredictedParams> out;
    for (auto const& d : t.devices()) out[d.name];
    for (auto const& [param, vs] : values) {
        auto k = seq.classify(param);
        if (!k || vs.empty()) continue;
        const double mean = std::accumulate(vs.begin(), vs.end(), 0.0) / static_cast<double>(vs.size());
        auto& p = out[k->first];
        if (k->second == units::Quantity::Ampere) p.id = mean;
        else if (param == "gm" + k->first) p.gm = mean;
        else if (param == "gds" + k->first) p.gds = mean;
        else if (param == "Cds" + k->first) p.cds = mean;
        else if (param == "Cgs" + k->first) p.cgs = mean;
    }
    for (auto const& [dev, p] : out)
        if (!p.valid()) throw Error(Errc::MalformedOutput, "no usable prediction for device " + dev);
    return out;
}

/// Runs the model on every encoder line and parses the result.
template <class S>
std::map<std::string, PredictedParams> predict_params(const Seq2Seq<S>& model, const SequenceBuilder& seq, const Topology& t,
                                                      const SpecTriple& spec) {
    std::vector<std::string> dec;
    for (auto const& line : seq.encoder(spec)) dec.push_back(model.infer(line));
    return collect_params(seq, t, seq.parse_decoder(dec));
}

/// Widths from predicted parameters with match-group averaging.
inline GroupWidths widths_from_params(const Topology& t, const LutSet& luts, const std::map<std::string, PredictedParams>& pred,
                                      const EstimateConfig& cfg, std::map<std::string, WidthEstimate>* est = nullptr) {
    std::map<std::string, WidthEstimate> e;
    for (auto const& d : t.devices()) e[d.name] = estimate_width(pred.at(d.name), luts.for_polarity(d.polarity), t.config().l, cfg);
    GroupWidths w;
    for (auto const& g : t.groups()) {
        double sum = 0;
        for (auto const& m : g.members) sum += e.at(m).width;
        w[g.name] = std::clamp(sum / static_cast<double>(g.members.size()), kMinWidth, kMaxWidth);
    }
    if (est) *est = std::move(e);
    return w;
}

/// Measured metrics of the topology at the given widths, or nullopt when the
/// bias cannot be solved or a crossing is missing.
inline std::optional<SpecTriple> verify_widths(const Topology& t, const GroupWidths& w, const ModelSet& models = {}) {
    auto e = evaluate_design(t, w, models, false);
    if (e.status != DesignEval::Status::Ok) return std::nullopt;
    return e.metrics;
}

template <class S>
SizingResult size_circuit(const SpecTriple& target, const Topology& t, const Seq2Seq<S>& model, const SequenceBuilder& seq,
                          const LutSet& luts, const SizingConfig& cfg = {}, const ModelSet& models = {}) {
    SizingResult r;
    SpecTriple spec = target;
    for (int it = 0; it <= cfg.copilot_iters; ++it) {
        r.spec_history.push_back(spec);
        r.iterations = it;
        std::optional<SpecTriple> got;
        try {
            std::map<std::string, PredictedParams> pred;
            try {
                pred = predict_params(model, seq, t, spec);
            } catch (const Error& e) {
                if (e.kind() != Errc::MalformedOutput) throw;
                r.diagnostics.push_back("iteration " + std::to_string(it) + ": " + e.what() + "; retrying at +1%");
                pred = predict_params(model, seq, t, scaled(spec, 1.0 + cfg.retry_bump));
            }
            std::map<std::string, WidthEstimate> est;
            const GroupWidths w = widths_from_params(t, luts, pred, cfg.estimate, &est);
            r.predicted = pred;
            r.estimates = est;
            r.widths.clear();
            r.vds.clear();
            r.final_cost = 0;
            for (auto const& d : t.devices()) {
                r.widths[d.name] = w.at(d.group);
                r.vds[d.name] = est.at(d.name).vds_star;
                r.final_cost += est.at(d.name).cost;
            }
            got = verify_widths(t, w, models);
            if (!got) r.diagnostics.push_back("iteration " + std::to_string(it) + ": sized circuit has no valid operating point or response");
        } catch (const Error& e) {
            r.diagnostics.push_back("iteration " + std::to_string(it) + ": " + e.what());
        }
        r.verified = got;
        if (got && meets(*got, target)) {
            r.status = it == 0 ? SizingStatus::MetOnFirstPass : SizingStatus::MetAfterCopilot;
            return r;
        }
        spec = tighten(spec, target, got, cfg.min_tighten);
    }
    r.status = SizingStatus::Failed;
    r.diagnostics.push_back("specification not met after " + std::to_string(cfg.copilot_iters) + " copilot iterations");
    return r;
}

inline nlohmann::json to_json(const SizingResult& r) {
    nlohmann::json j;
    j["widths"] = r.widths;
    j["vds"] = r.vds;
    j["metrics"] = r.verified ? to_json(*r.verified) : nlohmann::json(nullptr);
    j["status"] = status_name(r.status, r.iterations);
    j["iterations"] = r.iterations;
    j["final_cost"] = r.final_cost;
    j["spec_history"] = nlohmann::json::array();
    for (auto const& s : r.spec_history) j["spec_history"].push_back(to_json(s));
    j["diagnostics"] = r.diagnostics;
    for (auto const& [dev, e] : r.estimates)
        j["estimates"][dev] = {{"width", e.width}, {"vds_star", e.vds_star}, {"vds_curr", e.vds_curr}, {"vgs", e.vgs},
                               {"cost", e.cost},   {"iterations", e.iterations}, {"converged", e.converged}};
    return j;
}

} // namespace otasizer
