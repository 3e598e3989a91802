#include "otasizer/device.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace otasizer;

namespace {

const DeviceLut& nlut() {
    static const DeviceLut lut = build_lut(DeviceModel::nmos());
    return lut;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace

TEST(DeviceModel, MatchesReferenceEvaluation) {
    // Reference values from an independent evaluation of the model formulas
    // (finite differences for gm and gds).
    auto o = eval_model(DeviceModel::nmos(), 0.6, 0.6, 180e-9, 1e-6);
    EXPECT_LT(rel(o.id, 1.1397388391594947e-05), 1e-12);
    EXPECT_LT(rel(o.gm, 0.00016710776095981014), 1e-6);
    EXPECT_LT(rel(o.gds, 5.724003368661498e-06), 1e-6);
    EXPECT_LT(rel(o.cds, 6.047431568147635e-16), 1e-12);
    EXPECT_LT(rel(o.cgs, 1.4873072889578469e-15), 1e-12);
}

TEST(DeviceModel, CutoffAtZeroGateBias) {
    const auto m = DeviceModel::nmos();
    const double w = 1e-6;
    EXPECT_LT(eval_model(m, 0.0, 0.6, 180e-9, w).id, 1e-9 * m.beta * w);
}

TEST(DeviceModel, AnalyticDerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> v(0.05, 1.15);
    for (auto m : {DeviceModel::nmos(), DeviceModel::pmos()}) {
        for (int i = 0; i < 200; ++i) {
            const double vgs = v(rng), vds = v(rng), h = 1e-6;
            auto o = eval_model(m, vgs, vds, 180e-9, 2e-6);
            const double gm = (eval_model(m, vgs + h, vds, 180e-9, 2e-6).id - eval_model(m, vgs - h, vds, 180e-9, 2e-6).id) / (2 * h);
            const double gds = (eval_model(m, vgs, vds + h, 180e-9, 2e-6).id - eval_model(m, vgs, vds - h, 180e-9, 2e-6).id) / (2 * h);
            EXPECT_LT(rel(o.gm, gm), 1e-5) << vgs << ' ' << vds;
            EXPECT_LT(rel(o.gds, gds), 1e-5) << vgs << ' ' << vds;
        }
    }
}

TEST(DeviceModel, LinearInWidth) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> v(0.0, 1.2), w(0.7e-6, 50e-6);
    for (int i = 0; i < 100; ++i) {
        const double vgs = v(rng), vds = v(rng), ww = w(rng);
        auto a = eval_model(DeviceModel::nmos(), vgs, vds, 180e-9, ww);
        auto b = eval_model(DeviceModel::nmos(), vgs, vds, 180e-9, 2 * ww);
        for (std::size_t q = 0; q < 5; ++q) EXPECT_EQ(b[q], 2 * a[q]);
    }
}

TEST(DeviceModel, GmIdIsWidthIndependent) {
    for (double vgs : {0.2, 0.45, 0.6, 0.9}) {
        auto a = eval_model(DeviceModel::nmos(), vgs, 0.6, 180e-9, 1e-6);
        auto b = eval_model(DeviceModel::nmos(), vgs, 0.6, 180e-9, 10e-6);
        EXPECT_NEAR(a.gm / a.id, b.gm / b.id, 1e-12 * (a.gm / a.id));
    }
}

TEST(DeviceModel, OutOfRangeBias) {
    EXPECT_THROW(eval_model(DeviceModel::nmos(), 1.3, 0.6, 180e-9, 1e-6), Error);
    EXPECT_THROW(eval_model(DeviceModel::nmos(), 0.6, -0.1, 180e-9, 1e-6), Error);
}

TEST(DeviceLut, DefaultGridShape) {
    const auto& lut = nlut();
    EXPECT_EQ(lut.vgs_grid().size(), 21u);
    EXPECT_EQ(lut.vds_grid().size(), 21u);
    EXPECT_EQ(lut.l_grid().size(), 1u);
    EXPECT_EQ(lut.table().size(), 441u);
    EXPECT_DOUBLE_EQ(lut.wref(), 700e-9);
    EXPECT_DOUBLE_EQ(lut.vgs_grid()[1], 0.06);
}

TEST(DeviceLut, OnePointGrid) {
    LutGridConfig cfg;
    cfg.vgs_min = cfg.vgs_max = 0.6;
    cfg.vds_min = cfg.vds_max = 0.3;
    auto lut = build_lut(DeviceModel::nmos(), cfg);
    ASSERT_EQ(lut.table().size(), 1u);
    auto ref = eval_model(DeviceModel::nmos(), 0.6, 0.3, 180e-9, 700e-9);
    for (std::size_t q = 0; q < 5; ++q) EXPECT_EQ(lut.table()[0][q], ref[q] / 700e-9);
    auto o = lut.query(0.6, 0.3, 180e-9);
    for (std::size_t q = 0; q < 5; ++q) EXPECT_EQ(o[q], ref[q] / 700e-9);
}

TEST(DeviceLut, ExactAtKnots) {
    const auto& lut = nlut();
    for (std::size_t i = 0; i < 21; i += 3)
        for (std::size_t j = 0; j < 21; j += 4) {
            auto o = lut.query(lut.vgs_grid()[i], lut.vds_grid()[j], 180e-9);
            EXPECT_EQ(o, lut.at(i, j, 0));
        }
}

TEST(DeviceLut, OffGridWithinOnePercent) {
    auto o = nlut().query(0.63, 0.57, 180e-9);
    auto ref = eval_model(DeviceModel::nmos(), 0.63, 0.57, 180e-9, 1.0);
    for (std::size_t q = 0; q < 5; ++q) EXPECT_LT(rel(o[q], ref[q]), 0.01) << q;
}

TEST(DeviceLut, RefinedProbeGridWithinOnePercent) {
    for (auto m : {DeviceModel::nmos(), DeviceModel::pmos()}) {
        auto lut = build_lut(m);
        double worst = 0;
        for (int i = 0; i <= 100; ++i)
            for (int j = 1; j <= 100; ++j) {
                const double vgs = 0.012 * i, vds = 0.012 * j;
                auto o = lut.query(vgs, vds, 180e-9);
                auto ref = eval_model(m, vgs, vds, 180e-9, 1.0);
                for (std::size_t q = 0; q < 5; ++q) worst = std::max(worst, rel(o[q], ref[q]));
            }
        EXPECT_LT(worst, 0.01);
    }
}

TEST(DeviceLut, OutOfHull) {
    try {
        nlut().query(1.3, 0.6, 180e-9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::OutOfHull);
    }
}

TEST(DeviceLut, CsvRoundTripIsBitIdentical) {
    std::stringstream ss;
    nlut().write_csv(ss);
    auto back = DeviceLut::read_csv(ss);
    EXPECT_EQ(back.table(), nlut().table());
    EXPECT_EQ(back.vgs_grid(), nlut().vgs_grid());
    EXPECT_EQ(back.wref(), nlut().wref());
    EXPECT_EQ(device_model_from_json(back.model_json()), DeviceModel::nmos());
}

TEST(GmIdSearch, KnotTarget) {
    const auto& lut = nlut();
    const std::size_t j = 10;
    for (std::size_t i = 2; i < 20; i += 3) {
        const auto& r = lut.at(i, j, 0);
        const double vgs = find_vgs_for_gmid(lut, r.gm / r.id, lut.vds_grid()[j], 180e-9);
        EXPECT_NEAR(vgs, lut.vgs_grid()[i], 1e-6);
    }
}

TEST(GmIdSearch, RecoversModelBias) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> v(0.1, 1.1);
    for (int i = 0; i < 200; ++i) {
        const double vgs = v(rng), vds = v(rng);
        auto o = eval_model(DeviceModel::nmos(), vgs, vds, 180e-9, 3e-6);
        EXPECT_NEAR(find_vgs_for_gmid(nlut(), o.gm / o.id, vds, 180e-9), vgs, 2e-3);
    }
}

TEST(GmIdSearch, TargetOutOfRange) {
    const double top = nlut().gm_over_id(0.0, 0.6, 180e-9);
    try {
        find_vgs_for_gmid(nlut(), 10 * top, 0.6, 180e-9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::TargetOutOfRange);
    }
}
