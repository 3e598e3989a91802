#include "otasizer/acengine.hpp"
#include "otasizer/dpsfg.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace otasizer;

namespace {

const char* kActiveInductor = R"(C n1 n2 1p
Cgs n1 n2 10f
Cds n1 0 5f
Gcgds n1 0 100u
GcG n2 0 1m
Ggm n1 0 n2 n1 2m
Iin 0 n1 AC
)";

SmallSignalCircuit circuit(const std::string& text) { return linearize(parse_netlist(text)); }

std::multiset<std::string> edges_between(const DpSfg& g, const std::string& a, const std::string& b) {
    std::multiset<std::string> out;
    for (auto const& e : g.edges)
        if (g.vertices[e.from].name == a && g.vertices[e.to].name == b) out.insert(e.weight.render());
    return out;
}

// Every elementary cycle by brute force: each vertex subset in every cyclic order starting at its smallest member.
std::set<std::vector<int>> brute_cycles(const std::vector<std::vector<int>>& adj) {
    const int n = static_cast<int>(adj.size());
    auto has = [&](int a, int b) { return std::find(adj[a].begin(), adj[a].end(), b) != adj[a].end(); };
    std::set<std::vector<int>> out;
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> vs;
        for (int v = 0; v < n; ++v)
            if (mask >> v & 1) vs.push_back(v);
        do {
            bool ok = true;
            for (std::size_t i = 0; ok && i < vs.size(); ++i) ok = has(vs[i], vs[(i + 1) % vs.size()]);
            if (ok) out.insert(vs);
        } while (std::next_permutation(vs.begin() + 1, vs.end()));
    }
    return out;
}

} // namespace

TEST(DpSfg, ActiveInductorStructure) {
    auto g = build_dpsfg(circuit(kActiveInductor), "Iin", "n1");
    ASSERT_NE(g.z_of("n1"), nullptr);
    EXPECT_EQ(g.z_of("n1")->render(), "1/(sC+sCds+sCgs+gds)");
    EXPECT_EQ(g.z_of("n2")->render(), "1/(sC+sCgs+G)");
    EXPECT_EQ(edges_between(g, "Vn2", "In1"), (std::multiset<std::string>{"sC", "sCgs", "gm"}));
    EXPECT_EQ(edges_between(g, "Vn1", "In2"), (std::multiset<std::string>{"sC", "sCgs"}));
    EXPECT_EQ(edges_between(g, "Vn1", "In1"), (std::multiset<std::string>{"-gm"}));
    EXPECT_EQ(edges_between(g, "Iin", "In1"), (std::multiset<std::string>{"1"}));
}

TEST(DpSfg, OhmsLaw) {
    auto g = build_dpsfg(circuit("Iin 0 n1 AC\nGcG n1 0 1m\n"), "Iin", "n1");
    auto ps = enumerate_paths(g);
    ASSERT_EQ(ps.forward_paths.size(), 1u);
    EXPECT_TRUE(ps.cycles.empty());
    EXPECT_EQ(serialize_paths(g, ps), (std::vector<std::string>{"FP Iin 1 In1 1/(G) Vn1"}));
}

TEST(DpSfg, CurrentVerticesHaveOneOutgoingEdge) {
    auto g = build_dpsfg(circuit(kActiveInductor), "Iin", "n1");
    for (std::size_t v = 0; v < g.vertices.size(); ++v) {
        if (g.vertices[v].kind != VertexKind::AuxCurrent) continue;
        int out = 0;
        for (auto const& e : g.edges) out += e.from == static_cast<int>(v);
        EXPECT_EQ(out, 1);
    }
    for (auto const& e : g.edges) EXPECT_NE(e.from, e.to);
}

TEST(DpSfg, ActiveInductorPaths) {
    auto g = build_dpsfg(circuit(kActiveInductor), "Iin", "n1");
    auto ps = enumerate_paths(g);
    ASSERT_EQ(ps.forward_paths.size(), 1u);
    auto adj = detail::adjacency(g.vertices.size(), g.collapsed());
    auto bf = brute_cycles(adj);
    EXPECT_EQ(ps.cycles.size(), bf.size());
    auto lines = serialize_paths(g, ps);
    EXPECT_EQ(lines[0], "FP Iin 1 In1 1/(sC+sCds+sCgs+gds) Vn1");
    EXPECT_EQ(lines[1], "CY In1 1/(sC+sCds+sCgs+gds) Vn1 -gm In1");
    EXPECT_EQ(lines[2], "CY In1 1/(sC+sCds+sCgs+gds) Vn1 sC+sCgs In2 1/(sC+sCgs+G) Vn2 sC+sCgs+gm In1");
}

TEST(DpSfg, AcyclicChain) {
    std::vector<std::vector<int>> adj{{1}, {2}, {}};
    EXPECT_TRUE(johnson_cycles(adj).empty());
    EXPECT_EQ(simple_paths(adj, 0, 2), (std::vector<std::vector<int>>{{0, 1, 2}}));
}

TEST(DpSfg, JohnsonMatchesBruteForce) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 100; ++t) {
        const int n = 2 + static_cast<int>(rng() % 7);
        std::bernoulli_distribution edge(0.1 + 0.05 * (t % 8));
        std::vector<std::vector<int>> adj(n);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                if (a != b && edge(rng)) adj[a].push_back(b);
        auto j = johnson_cycles(adj);
        std::set<std::vector<int>> js(j.begin(), j.end());
        EXPECT_EQ(js.size(), j.size());
        EXPECT_EQ(js, brute_cycles(adj));
    }
}

TEST(DpSfg, PathCapRaises) {
    const int n = 12;
    std::vector<std::vector<int>> adj(n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a != b) adj[a].push_back(b);
    try {
        johnson_cycles(adj, 1000);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::PathExplosion);
    }
}

TEST(Mason, SingleEdge) {
    auto g = build_dpsfg(circuit("Iin 0 n1 AC\nGcG n1 0 4m\n"), "Iin", "n1");
    MasonEvaluator h(g, enumerate_paths(g));
    EXPECT_NEAR(h(circuit("Iin 0 n1 AC\nGcG n1 0 4m\n").bindings, Complex(0, 1)).real(), 250.0, 1e-12);
}

TEST(Mason, ActiveInductorMatchesMna) {
    auto c = circuit(kActiveInductor);
    auto g = build_dpsfg(c, "Iin", "n1");
    MasonEvaluator mason(g, enumerate_paths(g));
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.2, 5.0);
    for (int b = 0; b < 50; ++b) {
        auto cc = c;
        for (auto& [k, v] : cc.bindings) v *= u(rng);
        AcSystem mna(cc, "Iin", "n1");
        for (int i = 0; i < 20; ++i) {
            const double f = std::pow(10.0, 3 + 8.0 * i / 19);
            const Complex s(0, 2 * std::numbers::pi * f);
            const Complex hm = mason(cc.bindings, s), hn = mna.transfer(s);
            EXPECT_LT(std::abs(hm - hn) / std::abs(hn), 1e-9);
        }
    }
}

TEST(Mason, VoltageDrivenLadder) {
    auto c = circuit("Vin in 0 AC\nR1 in a 1k\nC1 a 0 1p\nR2 a out 2k\nC2 out 0 2p\nG1 out 0 a in 1m\nCf out a 100f\n");
    auto g = build_dpsfg(c, "Vin", "out");
    MasonEvaluator mason(g, enumerate_paths(g));
    AcSystem mna(c, "Vin", "out");
    for (double f : {1e3, 1e6, 1e8, 1e10}) {
        const Complex s(0, 2 * std::numbers::pi * f);
        EXPECT_LT(std::abs(mason(c.bindings, s) - mna.transfer(s)) / std::abs(mna.transfer(s)), 1e-9);
    }
}

TEST(Serialize, RoundTripAndSpecSuffix) {
    auto g = build_dpsfg(circuit(kActiveInductor), "Iin", "n1");
    auto ps = enumerate_paths(g);
    auto lines = serialize_paths(g, ps, SpecTriple{20.1234, 1.234e7, 1.234e8});
    ASSERT_EQ(lines.size(), 3u);
    for (auto const& l : lines) {
        auto p = parse_serialized_path(l);
        EXPECT_EQ(p.spec, "gain=20.12dB bw=12.34MHz ugf=123.4MHz");
        EXPECT_EQ(p.weights.size() + 1, p.vertices.size());
    }
    auto p = parse_serialized_path(lines[2]);
    EXPECT_TRUE(p.cycle);
    EXPECT_EQ(p.vertices, (std::vector<std::string>{"In1", "Vn1", "In2", "Vn2", "In1"}));
    EXPECT_TRUE(serialize_paths(g, PathSet{}).empty());
}

TEST(DpSfg, Errors) {
    try {
        build_dpsfg(circuit("Iin 0 n1 AC\nGcG n1 0 1m\nG1 n2 0 n1 0 1m\n"), "Iin", "n1");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::FloatingNode);
    }
    EXPECT_THROW(build_dpsfg(circuit("GcG n1 0 1m\n"), "Iin", "n1"), Error);
}
