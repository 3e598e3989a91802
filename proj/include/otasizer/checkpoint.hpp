#pragma once

// Checkpoint container and the inference front end.
//
// Layout: the 8-byte magic "OTACKPT1", a little-endian uint64 header length,
// the JSON header, then every tensor as little-endian float64 in the order
// listed under "tensors".

#include "otasizer/error.hpp"
#include "otasizer/model.hpp"
#include "otasizer/tokenizer.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace otasizer {

inline constexpr char kCheckpointMagic[9] = "OTACKPT1";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

/// Vocabulary flags for the weighted loss.
inline std::vector<char> numeric_flags(const Vocab& v) {
    std::vector<char> f(v.size(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = v.numeric(static_cast<int>(i));
    return f;
}

template <class S>
std::string checkpoint_bytes(const Transformer<S>& m, const Vocab& vocab, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json h = std::move(extra);
    h["version"] = kCheckpointVersion;
    h["config"] = to_json(m.config());
    h["vocab"] = vocab.to_json();
    h["vocab_hash"] = vocab.hash();
    h["tensors"] = nlohmann::json::array();
    for (auto const& s : m.slots()) h["tensors"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
    const std::string header = h.dump();
    std::string out(kCheckpointMagic, 8);
    detail::put_u64(out, header.size());
    out += header;
    for (S x : m.params()) detail::put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(x)));
    return out;
}

template <class S>
void save_checkpoint(const std::string& path, const Transformer<S>& m, const Vocab& vocab,
                     nlohmann::json extra = nlohmann::json::object()) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::BadFormat, "cannot write " + path);
    const auto bytes = checkpoint_bytes(m, vocab, std::move(extra));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Checkpoint {
    nlohmann::json header;
    ModelConfig config;
    Vocab vocab;
    std::vector<double> params;

    template <class S>
    Transformer<S> model() const {
        Transformer<S> m(config, numeric_flags(vocab));
        if (m.parameter_count() != params.size()) throw Error(Errc::ShapeMismatch, "checkpoint tensor sizes do not match its config");
        for (std::size_t i = 0; i < params.size(); ++i) m.params()[i] = static_cast<S>(params[i]);
        return m;
    }
};

inline Checkpoint parse_checkpoint(const std::string& bytes) {
    auto bad = [](const std::string& m) { return Error(Errc::BadFormat, "checkpoint: " + m); };
    if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0) throw bad("bad magic");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t hl = detail::get_u64(u + 8);
    if (hl > bytes.size() - 16) throw bad("truncated header");
    Checkpoint c;
    c.header = nlohmann::json::parse(bytes.substr(16, hl));
    if (c.header.at("version") != kCheckpointVersion) throw bad("unsupported version");
    c.config = model_config_from_json(c.header.at("config"));
    c.vocab = Vocab::from_json(c.header.at("vocab"));
    if (c.vocab.hash() != c.header.at("vocab_hash")) throw bad("vocab hash mismatch");
    std::size_t n = 0;
    for (auto const& t : c.header.at("tensors")) n += t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
    const std::size_t start = 16 + hl;
    if (bytes.size() != start + 8 * n) throw bad("payload size does not match tensor list");
    c.params.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.params[i] = std::bit_cast<double>(detail::get_u64(u + start + 8 * i));
    return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::BadFormat, "cannot read " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

/// Vocabulary plus model: string in, string out.
template <class S>
class Seq2Seq {
public:
    Seq2Seq(Vocab v, Transformer<S> m) : vocab_(std::move(v)), model_(std::move(m)) {}
    explicit Seq2Seq(const Checkpoint& c) : vocab_(c.vocab), model_(c.model<S>()) {}

    const Vocab& vocab() const { return vocab_; }
    const Transformer<S>& model() const { return model_; }

    std::string infer(const std::string& encoder_line) const {
        auto ids = vocab_.encode(encoder_line).ids;
        if (static_cast<int>(ids.size()) > model_.config().max_len)
            throw Error(Errc::SequenceTooLong, "encoder line of " + std::to_string(ids.size()) + " tokens");
        return vocab_.decode(model_.greedy(ids));
    }

private:
    Vocab vocab_;
    Transformer<S> model_;
};

/// Token-level training pairs from aligned encoder and decoder lines.
inline std::vector<Example> make_examples(const Vocab& v, const std::vector<std::string>& enc, const std::vector<std::string>& dec) {
    if (enc.size() != dec.size()) throw Error(Errc::ShapeMismatch, "encoder and decoder line counts differ");
    std::vector<Example> out;
    out.reserve(enc.size());
    for (std::size_t i = 0; i < enc.size(); ++i) out.push_back({v.encode(enc[i]).ids, v.encode(dec[i]).ids});
    return out;
}

} // namespace otasizer
