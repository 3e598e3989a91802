// Command-line front end: lut, sfg, data, tok, train, size, verify.

#include "otasizer/acengine.hpp"
#include "otasizer/datagen.hpp"
#include "otasizer/device.hpp"
#include "otasizer/dpsfg.hpp"
#include "otasizer/netlist.hpp"
#include "otasizer/pipeline.hpp"
#include "otasizer/sizing.hpp"
#include "otasizer/tokenizer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace otasizer;
using nlohmann::json;

namespace {

// Manifest written next to every output: the command, its options and input hashes.
void write_manifest(const fs::path& where, const std::string& command, json config, const std::vector<std::string>& inputs,
                    json outputs = json::object()) {
    json m;
    m["command"] = command;
    m["config"] = std::move(config);
    for (auto const& in : inputs) m["inputs"][in] = hash_file(in);
    m["outputs"] = std::move(outputs);
    write_text(where, m.dump(2) + "\n");
}

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

struct CircuitArgs {
    std::string netlist, input, output;
};

// Linearized circuit plus the resolved excitation and observation points.
struct Loaded {
    SmallSignalCircuit circuit;
    std::string input, output;
};

Loaded load_circuit(const CircuitArgs& a) {
    Loaded l;
    l.circuit = linearize(parse_netlist(read_text(a.netlist)));
    l.input = a.input.empty() ? default_input(l.circuit) : a.input;
    if (!a.output.empty()) {
        l.output = a.output;
    } else if (std::find(l.circuit.nodes.begin(), l.circuit.nodes.end(), "out") != l.circuit.nodes.end()) {
        l.output = "out";
    } else {
        const SsSource* s = l.circuit.source(l.input);
        if (!s) throw Error(Errc::NoExcitation, "no source named " + l.input);
        l.output = s->n_p == "0" ? s->n_n : s->n_p;
    }
    return l;
}

void add_circuit_args(CLI::App* cmd, CircuitArgs& a) {
    cmd->add_option("netlist", a.netlist, "SPICE-subset netlist")->required()->check(CLI::ExistingFile);
    cmd->add_option("--input", a.input, "excitation source (default: first source)");
    cmd->add_option("--output", a.output, "observed node (default: out, else the node the source drives)");
}

SpecTriple parse_spec(const std::string& text) {
    SpecTriple s{};
    bool g = false, b = false, u = false;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error(Errc::Usage, "spec items look like gain=20,bw=1e7,ugf=1e8");
        const std::string key = item.substr(0, eq);
        const double v = units::parse_value(item.substr(eq + 1));
        if (key == "gain") s.gain_db = v, g = true;
        else if (key == "bw") s.bw_hz = v, b = true;
        else if (key == "ugf") s.ugf_hz = v, u = true;
        else throw Error(Errc::Usage, "unknown spec key " + key);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (!(g && b && u)) throw Error(Errc::Usage, "spec needs gain, bw and ugf");
    return s;
}

std::pair<double, double> parse_range(const std::string& text) {
    const auto c = text.find(',');
    if (c == std::string::npos) throw Error(Errc::Usage, "range looks like LO,HI");
    return {units::parse_value(text.substr(0, c)), units::parse_value(text.substr(c + 1))};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transistor sizing for OTAs from signal-flow-graph sequences"};
    app.require_subcommand(1);
    std::uint64_t seed = 1;
    app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

    // lut build
    auto* lut = app.add_subcommand("lut", "device lookup tables");
    lut->require_subcommand(1);
    auto* lut_build = lut->add_subcommand("build", "characterise the built-in NMOS and PMOS models");
    std::string lut_dir = "lut";
    lut_build->add_option("-o,--out", lut_dir, "output directory")->capture_default_str();

    // sfg build / paths
    auto* sfg = app.add_subcommand("sfg", "driving-point signal flow graphs");
    sfg->require_subcommand(1);
    CircuitArgs sfg_args;
    std::string sfg_out;
    auto* sfg_build = sfg->add_subcommand("build", "write the graph as JSON");
    add_circuit_args(sfg_build, sfg_args);
    sfg_build->add_option("-o,--out", sfg_out, "output file (default: stdout)");
    auto* sfg_paths = sfg->add_subcommand("paths", "serialize forward paths and cycles");
    add_circuit_args(sfg_paths, sfg_args);
    sfg_paths->add_option("-o,--out", sfg_out, "output file (default: stdout)");

    // data gen
    auto* data = app.add_subcommand("data", "datasets");
    data->require_subcommand(1);
    auto* data_gen = data->add_subcommand("gen", "sweep widths and write labelled records");
    std::string topo_name = "5T", data_dir = "data";
    int points = 0;
    std::size_t target = 0;
    std::string gain_rng, bw_rng, ugf_rng;
    data_gen->add_option("--topology", topo_name, "5T, CM or 2S")->capture_default_str();
    data_gen->add_option("--points", points, "grid points per width group (default per topology)");
    data_gen->add_option("--target", target, "records to keep, 0 = all (default per topology)");
    data_gen->add_option("--gain", gain_rng, "gain window LO,HI in dB");
    data_gen->add_option("--bw", bw_rng, "bandwidth window LO,HI in Hz");
    data_gen->add_option("--ugf", ugf_rng, "unity-gain window LO,HI in Hz");
    data_gen->add_option("-o,--out", data_dir, "output directory")->capture_default_str();

    // tok train
    auto* tok = app.add_subcommand("tok", "tokenizer");
    tok->require_subcommand(1);
    auto* tok_train = tok->add_subcommand("train", "train the restricted BPE vocabulary");
    std::vector<std::string> tok_data;
    std::size_t vocab_size = 512;
    std::string vocab_out = "vocab.json";
    tok_train->add_option("datasets", tok_data, "dataset JSONL files")->required()->check(CLI::ExistingFile);
    tok_train->add_option("--vocab-size", vocab_size, "upper bound on the vocabulary")->capture_default_str();
    tok_train->add_option("-o,--out", vocab_out, "vocabulary file")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train the sequence model");
    std::vector<std::string> tr_data;
    std::string tr_vocab, tr_dir = "model";
    ModelConfig mc;
    TrainConfig tc;
    tr->add_option("--data", tr_data, "dataset JSONL files")->required()->check(CLI::ExistingFile);
    tr->add_option("--vocab", tr_vocab, "vocabulary file")->required()->check(CLI::ExistingFile);
    tr->add_option("--d-model", mc.d_model)->capture_default_str();
    tr->add_option("--heads", mc.n_heads)->capture_default_str();
    tr->add_option("--layers", mc.n_layers)->capture_default_str();
    tr->add_option("--d-ff", mc.d_ff)->capture_default_str();
    tr->add_option("--dropout", mc.dropout)->capture_default_str();
    tr->add_option("--max-len", mc.max_len)->capture_default_str();
    tr->add_option("--numeric-weight", mc.numeric_weight)->capture_default_str();
    tr->add_option("--epochs", tc.epochs)->capture_default_str();
    tr->add_option("--batch", tc.batch_size)->capture_default_str();
    tr->add_option("--lr", tc.lr)->capture_default_str();
    tr->add_option("-o,--out", tr_dir, "output directory")->capture_default_str();

    // size
    auto* sz = app.add_subcommand("size", "size a topology for a specification");
    std::string sz_spec, sz_model, sz_topo = "5T", sz_out;
    SizingConfig scfg;
    sz->add_option("--spec", sz_spec, "gain=<dB>,bw=<Hz>,ugf=<Hz>")->required();
    sz->add_option("--model", sz_model, "checkpoint")->required()->check(CLI::ExistingFile);
    sz->add_option("--topology", sz_topo, "5T, CM or 2S")->capture_default_str();
    sz->add_option("--copilot-iters", scfg.copilot_iters)->capture_default_str();
    sz->add_option("-o,--out", sz_out, "result JSON (default: stdout)");

    // verify
    auto* vf = app.add_subcommand("verify", "AC analysis of a netlist");
    CircuitArgs vf_args;
    add_circuit_args(vf, vf_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    try {
        if (lut_build->parsed()) {
            const ModelSet models;
            const LutGridConfig grid;
            json outs;
            for (auto const& [name, model] : {std::pair{"nmos", models.nmos}, std::pair{"pmos", models.pmos}}) {
                std::ostringstream os;
                build_lut(model, grid).write_csv(os);
                write_text(fs::path(lut_dir) / (std::string(name) + ".csv"), os.str());
                outs[std::string(name) + ".csv"] = hash_text(os.str());
            }
            write_manifest(fs::path(lut_dir) / "manifest.json", "lut build",
                           {{"wref_m", grid.wref}, {"vgs_step", grid.vgs_step}, {"vds_step", grid.vds_step}}, {}, outs);
            return 0;
        }
        if (sfg_build->parsed() || sfg_paths->parsed()) {
            const Loaded l = load_circuit(sfg_args);
            const DpSfg g = build_dpsfg(l.circuit, l.input, l.output);
            std::string text;
            if (sfg_build->parsed()) {
                text = to_json(g).dump(2) + "\n";
            } else {
                const PathSet ps = enumerate_paths(g);
                for (auto const& line : serialize_paths(g, ps)) text += line + "\n";
                std::fprintf(stderr, "forward paths %zu, cycles %zu\n", ps.forward_paths.size(), ps.cycles.size());
            }
            if (sfg_out.empty()) {
                std::cout << text;
            } else {
                write_text(sfg_out, text);
                write_manifest(manifest_for(sfg_out), sfg_build->parsed() ? "sfg build" : "sfg paths",
                               {{"input", l.input}, {"output", l.output}}, {sfg_args.netlist}, {{sfg_out, hash_text(text)}});
            }
            return 0;
        }
        if (data_gen->parsed()) {
            const Topology t = Topology::from_name(topo_name);
            DatagenConfig cfg;
            cfg.seed = seed;
            cfg.window = default_window(t.kind());
            cfg.points_per_group = points > 0 ? points : default_points(t.kind());
            cfg.target = data_gen->count("--target") ? target : default_target(t.kind());
            if (!gain_rng.empty()) std::tie(cfg.window.gain_min, cfg.window.gain_max) = parse_range(gain_rng);
            if (!bw_rng.empty()) std::tie(cfg.window.bw_min, cfg.window.bw_max) = parse_range(bw_rng);
            if (!ugf_rng.empty()) std::tie(cfg.window.ugf_min, cfg.window.ugf_max) = parse_range(ugf_rng);
            const ModelSet models;
            const Dataset ds = sweep(t, cfg, models);
            const std::string text = to_jsonl(ds.records);
            write_text(fs::path(data_dir) / "dataset.jsonl", text);
            json man = manifest(t, cfg, ds, models);
            man["command"] = "data gen";
            man["outputs"] = {{"dataset.jsonl", hash_text(text)}};
            man["wall_seconds"] = elapsed();
            write_text(fs::path(data_dir) / "manifest.json", man.dump(2) + "\n");
            std::fprintf(stderr, "%s: %zu evaluated, %zu kept (rejected: bias %zu, region %zu, response %zu, window %zu)\n",
                         t.name().c_str(), ds.evaluated, ds.records.size(), ds.rejected.bias, ds.rejected.region,
                         ds.rejected.response, ds.rejected.window);
            return 0;
        }
        if (tok_train->parsed()) {
            std::vector<std::string> corpus;
            for (auto const& f : tok_data) {
                auto lines = corpus_lines(load_dataset(f));
                corpus.insert(corpus.end(), lines.begin(), lines.end());
            }
            const Vocab v = train_bpe(corpus, vocab_size);
            save_vocab(v, vocab_out);
            const double ratio = compression_ratio(v, corpus);
            write_manifest(manifest_for(vocab_out), "tok train", {{"vocab_size", vocab_size}, {"compression", ratio}, {"wall_seconds", elapsed()}}, tok_data,
                           {{vocab_out, hash_file(vocab_out)}});
            std::fprintf(stderr, "vocabulary %zu tokens, %zu merges, mean compression %.3fx\n", v.size(), v.merges().size(), ratio);
            return 0;
        }
        if (tr->parsed()) {
            std::vector<DatasetRecord> recs;
            json inputs;
            for (auto const& f : tr_data) {
                auto r = load_dataset(f);
                recs.insert(recs.end(), r.begin(), r.end());
                inputs[f] = hash_file(f);
            }
            inputs[tr_vocab] = hash_file(tr_vocab);
            tc.seed = seed;
            const Vocab v = load_vocab(tr_vocab);
            run_training(recs, v, mc, tc, tr_dir, inputs, [](const EpochLog& r) {
                std::fprintf(stderr, "epoch %d train %.5f val %.5f lr %.3g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
            });
            return 0;
        }
        if (sz->parsed()) {
            const Topology t = Topology::from_name(sz_topo);
            const SpecTriple spec = parse_spec(sz_spec);
            const Checkpoint ck = load_checkpoint(sz_model);
            const Seq2Seq<TrainScalar> model(ck);
            const SequenceBuilder seq(t, reference_circuit(t));
            const LutSet luts = LutSet::build();
            const SizingResult r = size_circuit(spec, t, model, seq, luts, scfg);
            json j = to_json(r);
            j["spec"] = to_json(spec);
            j["topology"] = t.name();
            const std::string text = j.dump(2) + "\n";
            if (sz_out.empty()) {
                std::cout << text;
            } else {
                write_text(sz_out, text);
                write_manifest(manifest_for(sz_out), "size", {{"spec", sz_spec}, {"topology", t.name()}, {"copilot_iters", scfg.copilot_iters}},
                               {sz_model}, {{sz_out, hash_text(text)}});
            }
            return r.status == SizingStatus::Failed ? 1 : 0;
        }
        if (vf->parsed()) {
            const Loaded l = load_circuit(vf_args);
            const AcMetrics m = measure(l.circuit, l.input, l.output).metrics;
            json j;
            j["gain_db"] = m.gain_db;
            j["bw_hz"] = m.bw_hz ? json(*m.bw_hz) : json(nullptr);
            j["ugf_hz"] = m.ugf_hz ? json(*m.ugf_hz) : json(nullptr);
            j["input"] = l.input;
            j["output"] = l.output;
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == Errc::Usage ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
