#include "otasizer/sizing.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace otasizer;

namespace {

const LutSet& luts() {
    static const LutSet l = LutSet::build();
    return l;
}

PredictedParams exact(const DeviceModel& m, double w, double vgs, double vds) {
    const auto o = eval_model(m, vgs, vds, 180e-9, w);
    return {o.gm, o.gds, o.cds, o.cgs, o.id};
}

} // namespace

TEST(WidthEstimate, RecoversKnownDevice) {
    const auto e = estimate_width(exact(DeviceModel::nmos(), 5e-6, 0.55, 0.6), luts().nmos, 180e-9);
    EXPECT_TRUE(e.converged);
    EXPECT_LT(std::abs(e.width / 5e-6 - 1), 0.02);
    EXPECT_LT(std::abs(e.vds_star - 0.6), 0.03);
    EXPECT_NEAR(e.vgs, 0.55, 0.01);
}

TEST(WidthEstimate, ExactOnGridKnots) {
    for (auto const& [m, lut] : {std::pair{DeviceModel::nmos(), &luts().nmos}, std::pair{DeviceModel::pmos(), &luts().pmos}}) {
        const auto e = estimate_width(exact(m, 5e-6, 0.54, 0.6), *lut, 180e-9);
        EXPECT_LT(std::abs(e.width / 5e-6 - 1), 1e-3);
        EXPECT_NEAR(e.vds_star, 0.6, 1e-9);
    }
}

TEST(WidthEstimate, RandomOperatingPointsRoundTrip) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lw(std::log(0.7e-6), std::log(50e-6)), vg(0.3, 1.0), vd(0.2, 1.0);
    int within = 0;
    for (int i = 0; i < 500; ++i) {
        const double w = std::exp(lw(rng));
        const auto e = estimate_width(exact(DeviceModel::nmos(), w, vg(rng), vd(rng)), luts().nmos, 180e-9);
        within += std::abs(e.width / w - 1) < 0.02;
    }
    EXPECT_EQ(within, 500);
}

TEST(WidthEstimate, RejectsBadInputs) {
    PredictedParams p = exact(DeviceModel::nmos(), 5e-6, 0.55, 0.6);
    auto q = p;
    q.gds = -1;
    try {
        estimate_width(q, luts().nmos, 180e-9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::NonFiniteValue);
    }
    q = p;
    q.gm = p.id * 500; // gm/Id far beyond any bias
    try {
        estimate_width(q, luts().nmos, 180e-9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::GmIdOutOfRange);
    }
    EstimateConfig c;
    c.alpha = 0;
    EXPECT_THROW(estimate_width(p, luts().nmos, 180e-9, c), Error);
}

TEST(WidthEstimate, IterationCapReportsNonConvergence) {
    EstimateConfig c;
    c.max_iter = 1;
    const auto e = estimate_width(exact(DeviceModel::nmos(), 5e-6, 0.55, 0.6), luts().nmos, 180e-9, c);
    EXPECT_EQ(e.iterations, 1);
    EXPECT_FALSE(e.converged);
}

TEST(Copilot, MeetsRequiresAllThree) {
    const SpecTriple want{20, 1e7, 1e8};
    EXPECT_TRUE(meets({20, 1e7, 1e8}, want));
    EXPECT_FALSE(meets({19.9, 2e7, 2e8}, want));
    EXPECT_FALSE(meets({25, 0.9e7, 2e8}, want));
    EXPECT_FALSE(meets({25, 2e7, 0.9e8}, want));
}

TEST(Copilot, TighteningIsMonotonic) {
    const SpecTriple target{20, 1e7, 1e8};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> f(0.5, 1.5);
    SpecTriple s = target;
    for (int i = 0; i < 200; ++i) {
        const SpecTriple got{target.gain_db * f(rng), target.bw_hz * f(rng), target.ugf_hz * f(rng)};
        const auto n = tighten(s, target, got, 0.02);
        EXPECT_GE(n.gain_db, s.gain_db);
        EXPECT_GE(n.bw_hz, s.bw_hz);
        EXPECT_GE(n.ugf_hz, s.ugf_hz);
        if (got.gain_db < target.gain_db) {
            EXPECT_GE(n.gain_db, s.gain_db * 1.02 - 1e-12);
        } else {
            EXPECT_EQ(n.gain_db, s.gain_db);
        }
        s = n;
    }
    const auto none = tighten(target, target, std::nullopt, 0.02);
    EXPECT_DOUBLE_EQ(none.bw_hz, target.bw_hz * 1.02);
}

TEST(Sizing, ExactParametersReproduceWidths) {
    const Topology t(TopologyKind::FiveT);
    DatagenConfig cfg;
    cfg.points_per_group = 12;
    cfg.target = 40;
    cfg.window = default_window(TopologyKind::FiveT);
    const auto ds = sweep(t, cfg);
    const SequenceBuilder seq(t, reference_circuit(t));
    for (auto const& r : ds.records) {
        const auto pred = collect_params(seq, t, seq.parse_decoder(r.decoder));
        const auto w = widths_from_params(t, luts(), pred, {});
        for (auto const& [g, x] : w) EXPECT_LT(std::abs(x / r.widths.at(g) - 1), 0.05) << g;
        const auto got = verify_widths(t, w);
        ASSERT_TRUE(got);
        EXPECT_NEAR(got->gain_db, r.metrics.gain_db, 0.5);
    }
}

TEST(Sizing, UntrainedModelFailsWithHistory) {
    const Topology t(TopologyKind::FiveT);
    const SequenceBuilder seq(t, reference_circuit(t));
    const Vocab v;
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    c.d_ff = 16;
    c.max_len = 512;
    c.vocab_size = static_cast<int>(v.size());
    Transformer<float> m(c, numeric_flags(v));
    m.init(1);
    SizingConfig sc;
    sc.copilot_iters = 2;
    const auto r = size_circuit({200, 1e7, 1e8}, t, Seq2Seq<float>(v, m), seq, luts(), sc);
    EXPECT_EQ(r.status, SizingStatus::Failed);
    EXPECT_EQ(r.spec_history.size(), 3u);
    EXPECT_FALSE(r.diagnostics.empty());
    EXPECT_EQ(to_json(r).at("status"), "Failed");
    EXPECT_GT(r.spec_history.back().gain_db, 200.0);
}

TEST(Sizing, StatusNames) {
    EXPECT_EQ(status_name(SizingStatus::MetOnFirstPass, 0), "MetOnFirstPass");
    EXPECT_EQ(status_name(SizingStatus::MetAfterCopilot, 2), "MetAfterCopilot(2)");
}
