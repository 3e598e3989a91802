#pragma once

// Driving-point signal flow graphs.
//
// Each internal node k contributes a current vertex Ik and a voltage vertex
// Vk joined by Ik -> Vk with weight zk = 1/(total admittance at k). Branches
// between nodes and transconductances add Vj -> Ik edges carrying admittances.
// A voltage source ties its node to an excitation vertex; a current source
// feeds the current vertex of the node it drives.

#include "otasizer/error.hpp"
#include "otasizer/netlist.hpp"
#include "otasizer/symexpr.hpp"
#include "otasizer/units.hpp"

#include "json.hpp"

#include <algorithm>
#include <bitset>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace otasizer {

enum class VertexKind { Excitation, AuxVoltage, AuxCurrent };

inline const char* vertex_kind_name(VertexKind k) {
    switch (k) {
    case VertexKind::Excitation: return "excitation";
    case VertexKind::AuxVoltage: return "voltage";
    case VertexKind::AuxCurrent: return "current";
    }
    return "?";
}

struct Vertex {
    VertexKind kind;
    std::string name;
    std::string node; // circuit node, empty for the excitation
};

struct SfgEdge {
    int from = -1, to = -1;
    RationalExpr weight;
    std::string origin; // element that produced the edge
};

inline constexpr std::size_t kMaxSfgVertices = 256;
using VertexMask = std::bitset<kMaxSfgVertices>;

class DpSfg {
public:
    std::vector<Vertex> vertices;
    std::vector<SfgEdge> edges; // one edge per element contribution
    int input = -1;
    int output = -1;

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < vertices.size(); ++i)
            if (vertices[i].name == name) return static_cast<int>(i);
        return -1;
    }

    /// Impedance weight of Ik -> Vk for a circuit node.
    const RationalExpr* z_of(const std::string& node) const {
        for (auto const& e : edges)
            if (vertices[static_cast<std::size_t>(e.from)].kind == VertexKind::AuxCurrent &&
                vertices[static_cast<std::size_t>(e.from)].node == node)
                return &e.weight;
        return nullptr;
    }

    /// Parallel contributions between the same ordered vertex pair, summed.
    /// Only admittance edges can be parallel, so the sum stays an admittance.
    struct Hop {
        int from, to;
        RationalExpr weight;
    };

    std::vector<Hop> collapsed() const {
        std::map<std::pair<int, int>, std::size_t> at;
        std::vector<Hop> out;
        for (auto const& e : edges) {
            auto key = std::pair{e.from, e.to};
            auto it = at.find(key);
            if (it == at.end()) {
                at.emplace(key, out.size());
                out.push_back({e.from, e.to, e.weight});
                continue;
            }
            Hop& h = out[it->second];
            if (!h.weight.is_admittance() || !e.weight.is_admittance() || h.weight.sign != 1 || e.weight.sign != 1)
                throw Error(Errc::InvalidElement, "parallel impedance edges " + vertices[static_cast<std::size_t>(e.from)].name);
            h.weight.numerator += e.weight.numerator;
        }
        std::erase_if(out, [](const Hop& h) { return h.weight.numerator.empty(); });
        return out;
    }
};

/// Builds the graph seen from `input` (a source name) to the voltage of
/// `output`. Nodes held by voltage sources other than the input are AC ground.
inline DpSfg build_dpsfg(const SmallSignalCircuit& c, const std::string& input, const std::string& output) {
    const SsSource* src = c.source(input);
    if (!src) throw Error(Errc::NoExcitation, "no source named " + input);

    // Nodes fixed by voltage sources: node -> sign relative to the excitation (0 = grounded).
    std::map<std::string, int> held;
    for (auto const& s : c.sources) {
        if (!s.voltage) continue;
        const bool pg = s.n_p == kGround, ng = s.n_n == kGround;
        if (pg == ng) throw Error(Errc::InvalidElement, "voltage source " + s.name + " must have exactly one grounded terminal");
        const int sign = &s == src ? 1 : 0;
        if (ng) held[s.n_p] = sign;
        else held[s.n_n] = -sign;
    }

    DpSfg g;
    std::map<std::string, int> vidx, iidx;
    std::set<std::string> names;
    auto add_vertex = [&](VertexKind k, std::string name, std::string node) {
        if (!names.insert(name).second) throw Error(Errc::InvalidElement, "vertex name clash: " + name);
        g.vertices.push_back({k, std::move(name), std::move(node)});
        return static_cast<int>(g.vertices.size() - 1);
    };
    g.input = add_vertex(VertexKind::Excitation, src->name, "");

    std::vector<std::string> internal;
    for (auto const& n : c.nodes)
        if (!held.count(n)) internal.push_back(n);
    for (auto const& n : internal) {
        iidx[n] = add_vertex(VertexKind::AuxCurrent, "I" + n, n);
        vidx[n] = add_vertex(VertexKind::AuxVoltage, "V" + n, n);
    }
    if (g.vertices.size() > kMaxSfgVertices) throw Error(Errc::PathExplosion, "too many vertices");

    std::map<std::string, AdmittanceExpr> self;
    std::vector<SfgEdge> branch;

    // Source vertex of a voltage-controlled contribution, with its sign; nullopt when the node is AC ground.
    auto driver = [&](const std::string& n) -> std::optional<std::pair<int, int>> {
        if (auto it = vidx.find(n); it != vidx.end()) return std::pair{it->second, 1};
        if (auto it = held.find(n); it != held.end() && it->second != 0) return std::pair{g.input, it->second};
        return std::nullopt;
    };

    auto admittance = [&](const std::string& a, const std::string& b, const AdmittanceExpr& y, const std::string& origin) {
        if (a == b) return;
        for (auto [here, there] : {std::pair{a, b}, std::pair{b, a}}) {
            auto it = iidx.find(here);
            if (it == iidx.end()) continue;
            self[here] += y;
            if (auto d = driver(there)) branch.push_back({d->first, it->second, RationalExpr(y.scaled(Rational(d->second))), origin});
        }
    };

    for (auto const& y : c.admittances) admittance(y.n1, y.n2, y.y, y.origin);
    for (auto const& v : c.vccs) {
        // A transconductance sensing its own terminals is a conductance.
        if (v.ctrl_p == v.out_n && v.ctrl_n == v.out_p) {
            admittance(v.out_p, v.out_n, AdmittanceExpr::term(v.param), v.origin);
            continue;
        }
        for (auto [target, st] : {std::pair{v.out_p, 1}, std::pair{v.out_n, -1}}) {
            auto it = iidx.find(target);
            if (it == iidx.end()) continue;
            for (auto [ctrl, sc] : {std::pair{v.ctrl_p, 1}, std::pair{v.ctrl_n, -1}}) {
                auto d = driver(ctrl);
                if (!d) continue;
                branch.push_back({d->first, it->second, RationalExpr(AdmittanceExpr::term(v.param, 0, Rational(st * sc * d->second))), v.origin});
            }
        }
    }
    if (!src->voltage) {
        for (auto [node, sign] : {std::pair{src->n_n, 1}, std::pair{src->n_p, -1}}) {
            auto it = iidx.find(node);
            if (it != iidx.end()) branch.push_back({g.input, it->second, RationalExpr(AdmittanceExpr::constant(Rational(sign))), src->name});
        }
    }

    for (auto const& n : internal) {
        auto it = self.find(n);
        if (it == self.end() || it->second.empty()) throw Error(Errc::FloatingNode, n);
        g.edges.push_back({iidx[n], vidx[n], reciprocal(it->second), n});
    }
    for (auto& e : branch) g.edges.push_back(std::move(e));

    auto out = vidx.find(output);
    if (out == vidx.end()) throw Error(Errc::NoExcitation, "output " + output + " is not an internal node");
    g.output = out->second;
    return g;
}

// ---------------------------------------------------------------------------
// Path enumeration

struct PathSet {
    std::vector<std::vector<int>> forward_paths; // vertex sequences input..output
    std::vector<std::vector<int>> cycles;        // vertex sequences, start not repeated
};

struct PathLimits {
    std::size_t max_paths = 10000;
    std::size_t max_cycles = 10000;
};

namespace detail {

inline std::vector<std::vector<int>> adjacency(std::size_t n, const std::vector<DpSfg::Hop>& hops) {
    std::vector<std::vector<int>> adj(n);
    for (auto const& h : hops) adj[static_cast<std::size_t>(h.from)].push_back(h.to);
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    return adj;
}

inline std::vector<std::string> names_of(const std::vector<int>& seq, const std::vector<std::string>& names) {
    std::vector<std::string> out;
    out.reserve(seq.size());
    for (int v : seq) out.push_back(names[static_cast<std::size_t>(v)]);
    return out;
}

inline void sort_by_names(std::vector<std::vector<int>>& seqs, const std::vector<std::string>& names) {
    std::sort(seqs.begin(), seqs.end(), [&](auto const& a, auto const& b) { return names_of(a, names) < names_of(b, names); });
}

// Strongly connected components (Tarjan) of the subgraph induced by vertices >= lo.
inline std::vector<int> scc_labels(const std::vector<std::vector<int>>& adj, int lo) {
    const int n = static_cast<int>(adj.size());
    std::vector<int> index(n, -1), low(n, 0), comp(n, -1), stack;
    std::vector<char> on(n, 0);
    int counter = 0, ncomp = 0;
    std::function<void(int)> strong = [&](int v) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on[v] = 1;
        for (int w : adj[v]) {
            if (w < lo) continue;
            if (index[w] < 0) {
                strong(w);
                low[v] = std::min(low[v], low[w]);
            } else if (on[w]) {
                low[v] = std::min(low[v], index[w]);
            }
        }
        if (low[v] == index[v]) {
            int w;
            do {
                w = stack.back();
                stack.pop_back();
                on[w] = 0;
                comp[w] = ncomp;
            } while (w != v);
            ++ncomp;
        }
    };
    for (int v = lo; v < n; ++v)
        if (index[v] < 0) strong(v);
    return comp;
}

} // namespace detail

/// Elementary cycles of a digraph given as adjacency lists (Johnson 1975).
/// Each cycle starts at its smallest vertex index.
inline std::vector<std::vector<int>> johnson_cycles(const std::vector<std::vector<int>>& adj, std::size_t cap = 10000) {
    const int n = static_cast<int>(adj.size());
    std::vector<std::vector<int>> out;
    std::vector<char> blocked(n, 0);
    std::vector<std::set<int>> bmap(n);
    std::vector<int> stack;

    std::function<void(int)> unblock = [&](int u) {
        blocked[u] = 0;
        auto pending = std::move(bmap[u]);
        bmap[u].clear();
        for (int w : pending)
            if (blocked[w]) unblock(w);
    };

    for (int s = 0; s < n; ++s) {
        const auto comp = detail::scc_labels(adj, s);
        const int cs = comp[s];
        auto in_comp = [&](int v) { return v >= s && comp[v] == cs; };
        for (int v = s; v < n; ++v) {
            blocked[v] = 0;
            bmap[v].clear();
        }
        std::function<bool(int)> circuit = [&](int v) -> bool {
            bool found = false;
            stack.push_back(v);
            blocked[v] = 1;
            for (int w : adj[v]) {
                if (!in_comp(w)) continue;
                if (w == s) {
                    out.push_back(stack);
                    if (out.size() > cap) throw Error(Errc::PathExplosion, "more than " + std::to_string(cap) + " cycles");
                    found = true;
                } else if (!blocked[w] && circuit(w)) {
                    found = true;
                }
            }
            if (found) {
                unblock(v);
            } else {
                for (int w : adj[v])
                    if (in_comp(w)) bmap[w].insert(v);
            }
            stack.pop_back();
            return found;
        };
        circuit(s);
    }
    return out;
}

/// All simple paths from `from` to `to`, depth first.
inline std::vector<std::vector<int>> simple_paths(const std::vector<std::vector<int>>& adj, int from, int to,
                                                  std::size_t cap = 10000) {
    std::vector<std::vector<int>> out;
    std::vector<int> stack{from};
    std::vector<char> seen(adj.size(), 0);
    seen[static_cast<std::size_t>(from)] = 1;
    std::function<void(int)> dfs = [&](int v) {
        if (v == to) {
            out.push_back(stack);
            if (out.size() > cap) throw Error(Errc::PathExplosion, "more than " + std::to_string(cap) + " forward paths");
            return;
        }
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (seen[static_cast<std::size_t>(w)]) continue;
            seen[static_cast<std::size_t>(w)] = 1;
            stack.push_back(w);
            dfs(w);
            stack.pop_back();
            seen[static_cast<std::size_t>(w)] = 0;
        }
    };
    dfs(from);
    return out;
}

/// Forward paths and elementary cycles, ordered by vertex-name sequence.
/// Cycles are rotated to begin at their lexicographically smallest name.
inline PathSet enumerate_paths(const DpSfg& g, const PathLimits& lim = {}) {
    const auto hops = g.collapsed();
    const auto adj = detail::adjacency(g.vertices.size(), hops);
    std::vector<std::string> names;
    for (auto const& v : g.vertices) names.push_back(v.name);

    PathSet ps;
    ps.forward_paths = simple_paths(adj, g.input, g.output, lim.max_paths);
    ps.cycles = johnson_cycles(adj, lim.max_cycles);
    for (auto& cyc : ps.cycles) {
        auto first = std::min_element(cyc.begin(), cyc.end(), [&](int a, int b) { return names[static_cast<std::size_t>(a)] < names[static_cast<std::size_t>(b)]; });
        std::rotate(cyc.begin(), first, cyc.end());
    }
    detail::sort_by_names(ps.forward_paths, names);
    detail::sort_by_names(ps.cycles, names);
    return ps;
}

// ---------------------------------------------------------------------------
// Mason's gain formula

class MasonEvaluator {
public:
    MasonEvaluator(const DpSfg& g, const PathSet& ps) : hops_(g.collapsed()) {
        std::map<std::pair<int, int>, int> at;
        for (std::size_t i = 0; i < hops_.size(); ++i) at[{hops_[i].from, hops_[i].to}] = static_cast<int>(i);
        auto edges_of = [&](const std::vector<int>& seq, bool closed) {
            Walk w;
            for (std::size_t i = 0; i < seq.size(); ++i) {
                w.mask.set(static_cast<std::size_t>(seq[i]));
                if (i + 1 < seq.size()) w.edges.push_back(at.at({seq[i], seq[i + 1]}));
            }
            if (closed) w.edges.push_back(at.at({seq.back(), seq.front()}));
            return w;
        };
        for (auto const& p : ps.forward_paths) paths_.push_back(edges_of(p, false));
        for (auto const& c : ps.cycles) loops_.push_back(edges_of(c, true));

        // Every family of pairwise non-touching loops, grown from the empty family.
        sets_.push_back({-1, -1, 0, VertexMask{}});
        std::function<void(std::size_t, int)> grow = [&](std::size_t parent, int next) {
            for (int l = next; l < static_cast<int>(loops_.size()); ++l) {
                if ((sets_[parent].mask & loops_[static_cast<std::size_t>(l)].mask).any()) continue;
                sets_.push_back({static_cast<int>(parent), l, sets_[parent].size + 1, sets_[parent].mask | loops_[static_cast<std::size_t>(l)].mask});
                grow(sets_.size() - 1, l + 1);
            }
        };
        grow(0, 0);
    }

    std::size_t loop_families() const { return sets_.size(); }

    Complex operator()(const Bindings& b, Complex s) const {
        std::vector<Complex> w(hops_.size());
        for (std::size_t i = 0; i < hops_.size(); ++i) w[i] = hops_[i].weight.eval(b, s);
        auto gain = [&](const Walk& walk) {
            Complex acc{1.0, 0.0};
            for (int e : walk.edges) acc *= w[static_cast<std::size_t>(e)];
            return acc;
        };
        std::vector<Complex> lg(loops_.size());
        for (std::size_t i = 0; i < loops_.size(); ++i) lg[i] = gain(loops_[i]);
        std::vector<Complex> prod(sets_.size());
        prod[0] = 1.0;
        Complex delta = 1.0;
        for (std::size_t i = 1; i < sets_.size(); ++i) {
            prod[i] = prod[static_cast<std::size_t>(sets_[i].parent)] * lg[static_cast<std::size_t>(sets_[i].loop)];
            delta += (sets_[i].size % 2 ? -1.0 : 1.0) * prod[i];
        }
        if (!(std::abs(delta) >= 1e-300)) throw Error(Errc::DegenerateDelta, "graph determinant vanishes");
        Complex num{0.0, 0.0};
        for (auto const& p : paths_) {
            Complex dk = 0.0;
            for (std::size_t i = 0; i < sets_.size(); ++i)
                if (!(sets_[i].mask & p.mask).any()) dk += (sets_[i].size % 2 ? -1.0 : 1.0) * prod[i];
            num += gain(p) * dk;
        }
        return num / delta;
    }

private:
    struct Walk {
        std::vector<int> edges;
        VertexMask mask;
    };
    struct Family {
        int parent;
        int loop;
        int size;
        VertexMask mask;
    };

    std::vector<DpSfg::Hop> hops_;
    std::vector<Walk> paths_, loops_;
    std::vector<Family> sets_;
};

// ---------------------------------------------------------------------------
// Serialization

using ParamRenderer = std::function<std::string(const std::string&)>;

/// " | gain=20.13dB bw=12.34MHz ugf=123.4MHz"
inline std::string spec_suffix(const SpecTriple& s) {
    return " | gain=" + units::sig_digits(s.gain_db, 4) + "dB bw=" + units::hertz(s.bw_hz) + " ugf=" + units::hertz(s.ugf_hz);
}

inline std::string serialize_walk(const DpSfg& g, const std::vector<DpSfg::Hop>& hops, const std::vector<int>& seq,
                                  bool cycle, const ParamRenderer& name = {}) {
    std::map<std::pair<int, int>, const RationalExpr*> at;
    for (auto const& h : hops) at[{h.from, h.to}] = &h.weight;
    std::string out = cycle ? "CY" : "FP";
    const std::size_t n = seq.size() + (cycle ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int v = seq[i % seq.size()];
        out += ' ';
        out += g.vertices[static_cast<std::size_t>(v)].name;
        if (i + 1 < n) {
            out += ' ';
            out += at.at({v, seq[(i + 1) % seq.size()]})->render(name);
        }
    }
    return out;
}

/// One line per forward path then per cycle, each optionally suffixed with the spec block.
inline std::vector<std::string> serialize_paths(const DpSfg& g, const PathSet& ps, const std::optional<SpecTriple>& specs = {},
                                                const ParamRenderer& name = {}) {
    const auto hops = g.collapsed();
    std::vector<std::string> out;
    const std::string tail = specs ? spec_suffix(*specs) : std::string();
    for (auto const& p : ps.forward_paths) out.push_back(serialize_walk(g, hops, p, false, name) + tail);
    for (auto const& c : ps.cycles) out.push_back(serialize_walk(g, hops, c, true, name) + tail);
    return out;
}

struct ParsedPath {
    bool cycle = false;
    std::vector<std::string> vertices;
    std::vector<std::string> weights;
    std::string spec; // text after " | ", empty if none
};

inline ParsedPath parse_serialized_path(const std::string& line) {
    ParsedPath p;
    std::string body = line;
    if (auto bar = line.find(" | "); bar != std::string::npos) {
        body = line.substr(0, bar);
        p.spec = line.substr(bar + 3);
    }
    auto toks = detail::split_ws(body);
    if (toks.empty() || (toks[0] != "FP" && toks[0] != "CY") || toks.size() % 2 != 0)
        throw Error(Errc::BadFormat, "not a serialized path: " + line);
    p.cycle = toks[0] == "CY";
    for (std::size_t i = 1; i < toks.size(); ++i) (i % 2 ? p.vertices : p.weights).push_back(toks[i]);
    return p;
}

inline nlohmann::json to_json(const DpSfg& g) {
    nlohmann::json j;
    j["vertices"] = nlohmann::json::array();
    for (auto const& v : g.vertices) j["vertices"].push_back({{"name", v.name}, {"kind", vertex_kind_name(v.kind)}});
    j["edges"] = nlohmann::json::array();
    for (auto const& e : g.edges)
        j["edges"].push_back({{"from", g.vertices[static_cast<std::size_t>(e.from)].name},
                              {"to", g.vertices[static_cast<std::size_t>(e.to)].name},
                              {"weight", e.weight.render()},
                              {"origin", e.origin}});
    j["input"] = g.vertices[static_cast<std::size_t>(g.input)].name;
    j["output"] = g.vertices[static_cast<std::size_t>(g.output)].name;
    return j;
}

} // namespace otasizer
