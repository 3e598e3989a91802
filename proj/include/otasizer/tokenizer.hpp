#pragma once

// Character-level tokenization and restricted byte-pair encoding.
//
// Lines are first cut into words: every digit and '.' is a word of its own,
// a letter run directly after a number is a unit word ("mS", "fF", "MHz"),
// device names ([A-Z][0-9]+ not glued to a number) are atomic symbols, and
// spaces separate words. Merges only happen inside words, so numbers always
// stay character-level while names such as "gdsM1" can fuse.

#include "otasizer/error.hpp"
#include "otasizer/hash.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace otasizer {

enum SpecialToken : int { kPad = 0, kBos = 1, kEos = 2, kSep = 3 };
inline constexpr int kNumSpecial = 4;
inline constexpr int kFirstChar = 32, kLastChar = 126;
inline constexpr int kNumChars = kLastChar - kFirstChar + 1;

inline const std::array<std::string, kNumSpecial>& special_names() {
    static const std::array<std::string, kNumSpecial> n{"<PAD>", "<BOS>", "<EOS>", "<SEP>"};
    return n;
}

struct TokenSeq {
    std::vector<int> ids;
    std::string source;
};

inline int clt_id(char c) {
    const int u = static_cast<unsigned char>(c);
    if (u < kFirstChar || u > kLastChar)
        throw Error(Errc::UnknownCharacter, "character code " + std::to_string(u) + " is outside the sequence alphabet");
    return u - kFirstChar + kNumSpecial;
}

inline TokenSeq clt_encode(std::string_view s) {
    TokenSeq t{{}, std::string(s)};
    t.ids.reserve(s.size());
    for (char c : s) t.ids.push_back(clt_id(c));
    return t;
}

inline bool is_numeric_char(char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '.'; }

/// True for tokens the loss treats as numeric: a single digit or '.'.
inline bool is_numeric_token(std::string_view t) { return t.size() == 1 && is_numeric_char(t[0]); }

inline bool is_device_name(std::string_view t) {
    if (t.size() < 2 || !std::isupper(static_cast<unsigned char>(t[0]))) return false;
    return std::all_of(t.begin() + 1, t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

namespace detail {

/// A word is a list of symbols; a symbol is a single char or a device name.
using Word = std::vector<std::string>;

inline std::vector<Word> pretokenize(std::string_view s) {
    std::vector<Word> words;
    Word cur;
    auto flush = [&] {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
    };
    auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
    std::size_t i = 0;
    bool after_number = false;
    while (i < s.size()) {
        const char c = s[i];
        clt_id(c);
        if (is_numeric_char(c)) {
            flush();
            words.push_back({std::string(1, c)});
            after_number = true;
            ++i;
            continue;
        }
        if (c == ' ') {
            flush();
            words.push_back({" "});
            after_number = false;
            ++i;
            continue;
        }
        // Device name, unless glued to a preceding number.
        const bool glued = i > 0 && is_numeric_char(s[i - 1]);
        if (!glued && std::isupper(static_cast<unsigned char>(c)) && i + 1 < s.size() &&
            std::isdigit(static_cast<unsigned char>(s[i + 1]))) {
            std::size_t j = i + 1;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            if (after_number) flush();
            after_number = false;
            cur.emplace_back(s.substr(i, j - i));
            i = j;
            continue;
        }
        if (after_number) {
            // Unit word: the letter run right after a number, stopping before a device name.
            if (is_alpha(c)) {
                std::size_t j = i;
                while (j < s.size() && is_alpha(s[j])) {
                    if (std::isupper(static_cast<unsigned char>(s[j])) && j + 1 < s.size() &&
                        std::isdigit(static_cast<unsigned char>(s[j + 1])) && j > i)
                        break;
                    ++j;
                }
                Word unit;
                for (std::size_t k = i; k < j; ++k) unit.emplace_back(1, s[k]);
                words.push_back(std::move(unit));
                i = j;
                after_number = false;
                continue;
            }
            after_number = false;
        }
        cur.emplace_back(1, c);
        ++i;
    }
    flush();
    return words;
}

inline std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

} // namespace detail

class Vocab {
public:
    Vocab() {
        for (auto const& n : special_names()) add(n);
        for (int c = kFirstChar; c <= kLastChar; ++c) add(std::string(1, static_cast<char>(c)));
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw Error(Errc::UnknownTokenId, "token id " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }
    std::optional<int> id_of(const std::string& t) const {
        auto it = index_.find(t);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    bool numeric(int id) const { return id >= kNumSpecial && is_numeric_token(token(id)); }

    int add(const std::string& t) {
        if (auto it = index_.find(t); it != index_.end()) return it->second;
        tokens_.push_back(t);
        const int id = static_cast<int>(tokens_.size() - 1);
        index_[t] = id;
        return id;
    }

    void add_merge(const std::string& l, const std::string& r) {
        const int a = index_.at(l), b = index_.at(r);
        const int out = add(l + r);
        rank_[detail::pair_key(a, b)] = {static_cast<int>(merges_.size()), out};
        merges_.emplace_back(l, r);
    }

    TokenSeq encode(std::string_view s) const {
        TokenSeq t{{}, std::string(s)};
        for (auto const& w : detail::pretokenize(s)) {
            auto ids = encode_word(w);
            t.ids.insert(t.ids.end(), ids.begin(), ids.end());
        }
        return t;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string s;
        for (int id : ids) {
            if (id < kNumSpecial && id >= 0) continue;
            s += token(id);
        }
        return s;
    }

    std::string hash() const { return hash_text(to_json().dump()); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tokens"] = tokens_;
        j["merges"] = nlohmann::json::array();
        for (auto const& [l, r] : merges_) j["merges"].push_back({l, r});
        j["special"] = {{"PAD", kPad}, {"BOS", kBos}, {"EOS", kEos}, {"SEP", kSep}};
        return j;
    }

    static Vocab from_json(const nlohmann::json& j) {
        Vocab v;
        const auto toks = j.at("tokens").get<std::vector<std::string>>();
        if (toks.size() < v.size()) throw Error(Errc::BadFormat, "vocab is missing base tokens");
        for (std::size_t i = 0; i < v.size(); ++i)
            if (toks[i] != v.tokens_[i]) throw Error(Errc::BadFormat, "vocab base token mismatch at id " + std::to_string(i));
        // Seeds are the non-merge tokens after the base alphabet.
        std::set<std::string> merged;
        for (auto const& m : j.at("merges")) merged.insert(m.at(0).get<std::string>() + m.at(1).get<std::string>());
        for (std::size_t i = v.size(); i < toks.size(); ++i)
            if (!merged.count(toks[i])) v.add(toks[i]);
        for (auto const& m : j.at("merges")) v.add_merge(m.at(0), m.at(1));
        if (v.tokens_ != toks) throw Error(Errc::BadFormat, "vocab token order does not match its merges");
        return v;
    }

private:
    std::vector<int> encode_word(const detail::Word& w) const {
        std::vector<int> ids;
        for (auto const& sym : w) {
            if (auto id = id_of(sym)) {
                ids.push_back(*id);
            } else {
                for (char c : sym) ids.push_back(clt_id(c));
            }
        }
        // Apply the lowest-ranked merge until none applies.
        while (ids.size() > 1) {
            int best = -1, best_out = -1;
            std::size_t at = 0;
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                auto it = rank_.find(detail::pair_key(ids[i], ids[i + 1]));
                if (it != rank_.end() && (best < 0 || it->second.first < best)) {
                    best = it->second.first;
                    best_out = it->second.second;
                    at = i;
                }
            }
            if (best < 0) break;
            ids[at] = best_out;
            ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(at) + 1);
        }
        return ids;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::uint64_t, std::pair<int, int>> rank_; // pair -> (rank, output id)
};

/// Greedy BPE: the most frequent adjacent pair inside words is merged first,
/// ties broken by the lexicographic order of (left, right). Device names in
/// the corpus are seeded as tokens before merging.
inline Vocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    Vocab v;
    std::map<std::vector<std::string>, std::size_t> word_counts;
    std::set<std::string> seeds;
    for (auto const& line : corpus)
        for (auto& w : detail::pretokenize(line)) {
            for (auto const& sym : w)
                if (sym.size() > 1) seeds.insert(sym);
            ++word_counts[w];
        }
    for (auto const& s : seeds) v.add(s);

    struct WordState {
        std::vector<int> ids;
        std::size_t count;
    };
    std::vector<WordState> words;
    for (auto const& [w, n] : word_counts) {
        WordState ws{{}, n};
        for (auto const& sym : w) ws.ids.push_back(*v.id_of(sym));
        words.push_back(std::move(ws));
    }

    while (v.size() < vocab_size) {
        std::unordered_map<std::uint64_t, std::size_t> counts;
        for (auto const& w : words)
            for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) {
                if (v.numeric(w.ids[i]) || v.numeric(w.ids[i + 1])) continue;
                counts[detail::pair_key(w.ids[i], w.ids[i + 1])] += w.count;
            }
        std::uint64_t best = 0;
        std::size_t best_n = 0;
        for (auto const& [k, n] : counts) {
            if (n < 2) continue;
            if (n > best_n) {
                best = k;
                best_n = n;
                continue;
            }
            if (n == best_n) {
                const auto& bl = v.token(static_cast<int>(best >> 32));
                const auto& br = v.token(static_cast<int>(best & 0xffffffffu));
                const auto& kl = v.token(static_cast<int>(k >> 32));
                const auto& kr = v.token(static_cast<int>(k & 0xffffffffu));
                if (std::tie(kl, kr) < std::tie(bl, br)) best = k;
            }
        }
        if (best_n == 0) break;
        const int a = static_cast<int>(best >> 32), b = static_cast<int>(best & 0xffffffffu);
        v.add_merge(v.token(a), v.token(b));
        const int out = *v.id_of(v.token(a) + v.token(b));
        for (auto& w : words) {
            std::vector<int> next;
            next.reserve(w.ids.size());
            for (std::size_t i = 0; i < w.ids.size(); ++i) {
                if (i + 1 < w.ids.size() && w.ids[i] == a && w.ids[i + 1] == b) {
                    next.push_back(out);
                    ++i;
                } else {
                    next.push_back(w.ids[i]);
                }
            }
            w.ids = std::move(next);
        }
    }
    return v;
}

inline void save_vocab(const Vocab& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::BadFormat, "cannot write " + path);
    out << v.to_json().dump(1) << "\n";
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::BadFormat, "cannot read " + path);
    return Vocab::from_json(nlohmann::json::parse(in));
}

/// Mean per-line ratio of character tokens to BPE tokens.
inline double compression_ratio(const Vocab& v, const std::vector<std::string>& lines) {
    double sum = 0;
    std::size_t n = 0;
    for (auto const& l : lines) {
        if (l.empty()) continue;
        sum += static_cast<double>(l.size()) / static_cast<double>(v.encode(l).ids.size());
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

} // namespace otasizer
