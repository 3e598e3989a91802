#pragma once

// Stage wiring shared by the command-line tool and the acceptance runner.

#include "otasizer/checkpoint.hpp"
#include "otasizer/datagen.hpp"
#include "otasizer/hash.hpp"
#include "otasizer/sizing.hpp"
#include "otasizer/shuffle.hpp"
#include "otasizer/tokenizer.hpp"
#include "otasizer/trainer.hpp"

#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace otasizer {

/// Scalar type used for training and inference.
using TrainScalar = float;

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(Errc::BadFormat, "cannot write " + p.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(Errc::BadFormat, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(Errc::BadFormat, "cannot read " + p.string());
    auto recs = read_jsonl(in);
    if (recs.empty()) throw Error(Errc::EmptyDataset, p.string() + " holds no records");
    return recs;
}

/// Every encoder and decoder line of the records, in record order.
inline std::vector<std::string> corpus_lines(const std::vector<DatasetRecord>& recs) {
    std::vector<std::string> out;
    for (auto const& r : recs) {
        out.insert(out.end(), r.encoder.begin(), r.encoder.end());
        out.insert(out.end(), r.decoder.begin(), r.decoder.end());
    }
    return out;
}

struct Split {
    std::vector<std::size_t> train, val;
};

/// Record-level split: a seeded permutation, the first share goes to training.
inline Split split_records(std::size_t n, std::uint64_t seed, double train_share = 0.8) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    seeded_shuffle(idx, seed);
    const auto nt = static_cast<std::size_t>(std::llround(train_share * static_cast<double>(n)));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nt));
    s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(nt), idx.end());
    return s;
}

inline std::vector<Example> examples_for(const Vocab& v, const std::vector<DatasetRecord>& recs, const std::vector<std::size_t>& which) {
    std::vector<Example> out;
    for (std::size_t i : which) {
        auto e = make_examples(v, recs[i].encoder, recs[i].decoder);
        out.insert(out.end(), e.begin(), e.end());
    }
    return out;
}

struct TrainingRun {
    Split split;
    TrainResult<TrainScalar> result;
    std::string checkpoint;
};

/// Splits, trains and writes model.ckpt, train_log.csv, split.json and
/// manifest.json into `dir`.
inline TrainingRun run_training(const std::vector<DatasetRecord>& recs, const Vocab& vocab, ModelConfig mc, const TrainConfig& tc,
                                const std::filesystem::path& dir, const nlohmann::json& inputs = nlohmann::json::object(),
                                const std::function<void(const EpochLog&)>& on_epoch = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(dir);
    mc.vocab_size = static_cast<int>(vocab.size());
    TrainingRun run;
    run.split = split_records(recs.size(), tc.seed);
    const auto tr = examples_for(vocab, recs, run.split.train);
    const auto va = examples_for(vocab, recs, run.split.val);
    Transformer<TrainScalar> m(mc, numeric_flags(vocab));
    m.init(tc.seed);
    std::vector<EpochLog> rows;
    run.result = train(m, tr, va, tc, [&](const EpochLog& row) {
        rows.push_back(row);
        write_text(dir / "train_log.csv", training_log_csv(rows));
        if (on_epoch) on_epoch(row);
    });
    write_text(dir / "train_log.csv", training_log_csv(run.result.log));
    nlohmann::json extra;
    extra["epoch"] = run.result.best_epoch;
    extra["val_loss"] = run.result.best_val;
    extra["train"] = to_json(tc);
    const auto bytes = checkpoint_bytes(m, vocab, extra);
    write_text(dir / "model.ckpt", bytes);
    run.checkpoint = (dir / "model.ckpt").string();
    write_text(dir / "split.json", nlohmann::json{{"train", run.split.train}, {"val", run.split.val}}.dump() + "\n");
    nlohmann::json man;
    man["stage"] = "train";
    man["model"] = to_json(mc);
    man["train"] = to_json(tc);
    man["inputs"] = inputs;
    man["vocab_hash"] = vocab.hash();
    man["examples"] = {{"train", tr.size()}, {"val", va.size()}};
    man["best_epoch"] = run.result.best_epoch;
    man["best_val_loss"] = run.result.best_val;
    man["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    man["outputs"] = {{"model.ckpt", hash_text(bytes)}, {"train_log.csv", hash_text(training_log_csv(run.result.log))}};
    write_text(dir / "manifest.json", man.dump(2) + "\n");
    return run;
}

/// Pearson correlation coefficient; 0 for degenerate inputs.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = std::min(x.size(), y.size());
    if (n < 2) return 0.0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace otasizer
