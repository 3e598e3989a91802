#include "otasizer/netlist.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace otasizer;

namespace {

const char* kActiveInductor = R"(* active inductor
C n1 n2 1p
Cgs n1 n2 10f
Cds n1 0 5f
Gcgds n1 0 100u
GcG n2 0 1m
Ggm n1 0 n2 n1 2m
.end
)";

Errc kind_of(const std::string& text) {
    try {
        parse_netlist(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return Errc::Usage;
}

} // namespace

TEST(Netlist, CapacitorLine) {
    auto nl = parse_netlist("C1 n1 n2 1p\n");
    ASSERT_EQ(nl.elements.size(), 1u);
    EXPECT_EQ(nl.elements[0].name, "C1");
    EXPECT_EQ(std::get<Capacitor>(nl.elements[0].kind), (Capacitor{"n1", "n2", 1e-12}));
}

TEST(Netlist, ActiveInductorElements) {
    auto nl = parse_netlist(kActiveInductor);
    ASSERT_EQ(nl.elements.size(), 6u);
    EXPECT_EQ(std::get<Capacitor>(nl.find("C")->kind), (Capacitor{"n1", "n2", 1e-12}));
    EXPECT_EQ(std::get<Capacitor>(nl.find("Cgs")->kind), (Capacitor{"n1", "n2", 10e-15}));
    EXPECT_EQ(std::get<Capacitor>(nl.find("Cds")->kind), (Capacitor{"n1", "0", 5e-15}));
    EXPECT_EQ(std::get<Conductance>(nl.find("Gcgds")->kind), (Conductance{"n1", "0", 100e-6}));
    EXPECT_EQ(std::get<Conductance>(nl.find("GcG")->kind), (Conductance{"n2", "0", 1e-3}));
    EXPECT_EQ(std::get<Vccs>(nl.find("Ggm")->kind), (Vccs{"n1", "0", "n2", "n1", 2e-3}));
}

TEST(Netlist, Errors) {
    EXPECT_EQ(kind_of("M1 d g s 0 N W=1u L=180n\n"), Errc::MissingBias);
    EXPECT_EQ(kind_of("C1 a b 1p\nC1 a 0 1p\n"), Errc::DuplicateElement);
    EXPECT_EQ(kind_of("X1 a b 1p\n"), Errc::UnknownElement);
    EXPECT_EQ(kind_of("C1 a b\n"), Errc::MissingField);
    EXPECT_EQ(kind_of("C1 a b 1q2\n"), Errc::SyntaxError);
    EXPECT_EQ(kind_of("C1 a a 1p\n"), Errc::InvalidElement);
    EXPECT_EQ(kind_of("R1 a b -5\n"), Errc::InvalidElement);
    EXPECT_EQ(kind_of(".foo\n"), Errc::SyntaxError);
    try {
        parse_netlist("C1 a b 1p\n\nC2 a b zz\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Netlist, DirectivesAndDefaultBias) {
    auto nl = parse_netlist(".title amp\nM1 d g 0 0 N W=1u L=180n\n.bias * vgs=0.5 vds=0.6\n.spec gain=20 bw=1meg ugf=10meg\nC1 d 0 1p\n");
    EXPECT_EQ(nl.name, "amp");
    ASSERT_TRUE(nl.default_bias);
    EXPECT_EQ(nl.default_bias->vgs, 0.5);
    ASSERT_TRUE(nl.spec);
    EXPECT_EQ(nl.spec->bw_hz, 1e6);
}

TEST(Netlist, PrintParseFixpoint) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int trial = 0; trial < 100; ++trial) {
        Netlist nl;
        nl.name = "t" + std::to_string(trial);
        nl.elements.push_back({"M1", Mosfet{"out", "in", "tail", "0", Polarity::N, u(rng) * 1e-6, 180e-9}});
        nl.elements.push_back({"M2", Mosfet{"out", "vb", "vdd", "vdd", Polarity::P, u(rng) * 1e-6, 360e-9}});
        nl.elements.push_back({"R1", Resistor{"out", "0", u(rng) * 1e3}});
        nl.elements.push_back({"CL", Capacitor{"out", "0", u(rng) * 1e-13}});
        nl.elements.push_back({"Gc2", Conductance{"tail", "0", u(rng) * 1e-4}});
        nl.elements.push_back({"G3", Vccs{"out", "0", "in", "tail", u(rng) * 1e-3}});
        nl.elements.push_back({"Vin", VSource{"in", "0"}});
        nl.elements.push_back({"Ib", ISource{"0", "tail"}});
        nl.bias["M1"] = {u(rng) / 10, u(rng) / 10};
        nl.bias["M2"] = {u(rng) / 10, u(rng) / 10};
        nl.spec = SpecTriple{u(rng), u(rng) * 1e6, u(rng) * 1e8};
        auto once = parse_netlist(print_netlist(nl));
        EXPECT_EQ(once, nl);
        EXPECT_EQ(parse_netlist(print_netlist(once)), once);
    }
}

TEST(Linearize, SingleNmosMatchesModel) {
    auto nl = parse_netlist("M1 d g 0 0 N W=1u L=180n\n.bias M1 vgs=0.6 vds=0.6\nVin g 0 AC\n");
    auto c = linearize(nl);
    auto ref = eval_model(DeviceModel::nmos(), 0.6, 0.6, 180e-9, 1e-6);
    ASSERT_EQ(c.bindings.size(), 4u);
    EXPECT_EQ(c.bindings.at("gmM1"), ref.gm);
    EXPECT_EQ(c.bindings.at("gdsM1"), ref.gds);
    EXPECT_EQ(c.bindings.at("CgsM1"), ref.cgs);
    EXPECT_EQ(c.bindings.at("CdsM1"), ref.cds);
    ASSERT_EQ(c.vccs.size(), 1u);
    EXPECT_EQ(c.vccs[0].ctrl_p, "g");
    EXPECT_EQ(c.vccs[0].ctrl_n, "0");
    EXPECT_EQ(c.device_index.at("M1").gm, "gmM1");
}

TEST(Linearize, PassivesOnly) {
    auto nl = parse_netlist(kActiveInductor);
    nl.elements.pop_back();
    auto c = linearize(nl);
    EXPECT_TRUE(c.vccs.empty());
    ASSERT_EQ(c.admittances.size(), 5u);
    EXPECT_EQ(c.admittances[0].y.render(), "sC");
    EXPECT_EQ(c.admittances[3].y.render(), "gds");
    EXPECT_EQ(c.bindings.at("G"), 1e-3);
}

TEST(Linearize, DoublingWidthDoublesBindings) {
    auto a = linearize(parse_netlist("M1 d g 0 0 P W=3u L=180n\n.bias M1 vgs=0.7 vds=0.4\n"));
    auto b = linearize(parse_netlist("M1 d g 0 0 P W=6u L=180n\n.bias M1 vgs=0.7 vds=0.4\n"));
    for (auto const& [k, v] : a.bindings) EXPECT_EQ(b.bindings.at(k), 2 * v) << k;
}

TEST(Linearize, ElementCountConservation) {
    auto nl = parse_netlist(R"(M1 out in tail 0 N W=2u L=180n
M2 out vb 0 0 P W=4u L=180n
M3 tail 0 0 0 N W=4u L=180n
CL out 0 500f
R1 in 0 10k
Vin in 0 AC
.bias * vgs=0.6 vds=0.6
)");
    auto c = linearize(nl);
    EXPECT_EQ(c.element_count(), 2u + 4u * 3u + 1u);
}

TEST(Linearize, BiasOutOfRange) {
    try {
        linearize(parse_netlist("M1 d g 0 0 N W=1u L=180n\n.bias M1 vgs=1.5 vds=0.6\n"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::BiasOutOfRange);
    }
}
