#include "otasizer/tokenizer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace otasizer;

namespace {

std::vector<std::string> sample_corpus() {
    return {"FP Vinp 1 Vinp -gmM1 IxM1 1/(gdsM1+sCdsM1) Vout | gain=20.5dB bw=3.12e+07Hz ugf=4.5e+08Hz",
            "FP Vinp 605uSM1 Vinp -605uSM1 IxM1 1/(8.1uSM1+s38.2fFM1) Vout",
            "CY Vx -gmM3 Ix 1/(gdsM3+gdsM1) Vx",
            "DV 23.6uAM1 12.4uAM5 1.02fFM5 | gain=21dB bw=2e+07Hz ugf=3e+08Hz"};
}

} // namespace

TEST(Tokenizer, CharacterIdsAreOffsetBySpecials) {
    EXPECT_EQ(clt_id(' '), kNumSpecial);
    EXPECT_EQ(clt_id('~'), kNumSpecial + kNumChars - 1);
    EXPECT_EQ(clt_id('A'), 'A' - 32 + 4);
    const Vocab v;
    EXPECT_EQ(v.size(), static_cast<std::size_t>(kNumSpecial + kNumChars));
    EXPECT_EQ(v.token(kPad), "<PAD>");
    EXPECT_EQ(v.token(kSep), "<SEP>");
}

TEST(Tokenizer, RejectsCharactersOutsideAlphabet) {
    for (std::string bad : {"a\tb", "x\ny", "\xc3\xa9"}) {
        try {
            clt_encode(bad);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), Errc::UnknownCharacter);
        }
        EXPECT_THROW(Vocab().encode(bad), Error);
    }
}

TEST(Tokenizer, PretokenizeSplitsNumbersUnitsAndDevices) {
    const auto words = detail::pretokenize("12.5uSM1 gdsM2");
    std::vector<std::string> flat;
    for (auto const& w : words) {
        std::string s;
        for (auto const& sym : w) s += sym + "|";
        flat.push_back(s);
    }
    const std::vector<std::string> expect{"1|", "2|", ".|", "5|", "u|S|", "M1|", " |", "g|d|s|M2|"};
    EXPECT_EQ(flat, expect);
}

TEST(Tokenizer, MergesMostFrequentPairWithLexicographicTies) {
    // "ab" and "cd" both occur twice; "ab" sorts first.
    const Vocab v = train_bpe({"cd ab", "ab cd"}, 1000);
    ASSERT_EQ(v.merges().size(), 2u);
    EXPECT_EQ(v.merges()[0], (std::pair<std::string, std::string>{"a", "b"}));
    EXPECT_EQ(v.merges()[1], (std::pair<std::string, std::string>{"c", "d"}));
    EXPECT_EQ(v.encode("ab cd").ids.size(), 3u);
}

TEST(Tokenizer, StopsAtVocabSizeOrWhenPairsAreRare) {
    EXPECT_EQ(train_bpe({"abc abc"}, 1000).merges().size(), 2u);
    EXPECT_EQ(train_bpe({"abc"}, 1000).merges().size(), 0u);
    const Vocab base;
    EXPECT_EQ(train_bpe({"abc abc"}, base.size() + 1).size(), base.size() + 1);
}

TEST(Tokenizer, RoundTripOnRandomStrings) {
    const Vocab v = train_bpe(sample_corpus(), 512);
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> ch(kFirstChar, kLastChar), len(0, 60);
    for (int i = 0; i < 500; ++i) {
        std::string s;
        for (int k = len(rng); k > 0; --k) s += static_cast<char>(ch(rng));
        EXPECT_EQ(v.decode(v.encode(s).ids), s);
    }
    for (auto const& line : sample_corpus()) EXPECT_EQ(v.decode(v.encode(line).ids), line);
}

TEST(Tokenizer, DigitsNeverMerge) {
    const Vocab v = train_bpe(sample_corpus(), 512);
    for (auto const& [l, r] : v.merges()) {
        EXPECT_FALSE(is_numeric_token(l)) << l << r;
        EXPECT_FALSE(is_numeric_token(r)) << l << r;
    }
    const auto ids = v.encode("605uSM1").ids;
    ASSERT_GE(ids.size(), 5u);
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(v.numeric(ids[static_cast<std::size_t>(k)]));
    EXPECT_EQ(v.token(ids.back()), "M1");
}

TEST(Tokenizer, DeviceNamesAreSeeded) {
    const Vocab v = train_bpe(sample_corpus(), 0);
    for (std::string dev : {"M1", "M3", "M5"}) EXPECT_TRUE(v.id_of(dev)) << dev;
    EXPECT_TRUE(is_device_name("M12"));
    EXPECT_FALSE(is_device_name("M"));
    EXPECT_FALSE(is_device_name("m1"));
    EXPECT_FALSE(is_device_name("MA"));
}

TEST(Tokenizer, CompressionAtLeastOne) {
    const Vocab v = train_bpe(sample_corpus(), 512);
    EXPECT_GT(compression_ratio(v, sample_corpus()), 1.0);
    EXPECT_DOUBLE_EQ(compression_ratio(Vocab(), sample_corpus()), 1.0);
}

TEST(Tokenizer, SaveLoadPreservesEncoding) {
    const Vocab v = train_bpe(sample_corpus(), 512);
    const auto path = (std::filesystem::temp_directory_path() / "otasizer_vocab_test.json").string();
    save_vocab(v, path);
    const Vocab w = load_vocab(path);
    EXPECT_EQ(w.hash(), v.hash());
    EXPECT_EQ(w.tokens(), v.tokens());
    for (auto const& line : sample_corpus()) EXPECT_EQ(w.encode(line).ids, v.encode(line).ids);
    std::filesystem::remove(path);
}

TEST(Tokenizer, CorruptVocabRejected) {
    auto j = train_bpe(sample_corpus(), 512).to_json();
    auto toks = j.at("tokens").get<std::vector<std::string>>();
    std::swap(toks[10], toks[11]);
    j["tokens"] = toks;
    try {
        Vocab::from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::BadFormat);
    }
}

TEST(Tokenizer, DecodeSkipsSpecials) {
    const Vocab v;
    std::vector<int> ids{kBos};
    for (int id : v.encode("ab").ids) ids.push_back(id);
    ids.push_back(kEos);
    ids.push_back(kPad);
    EXPECT_EQ(v.decode(ids), "ab");
    EXPECT_THROW(v.decode({9999}), Error);
}

TEST(Tokenizer, CompressionMonotoneInVocabSize) {
    const auto corpus = sample_corpus();
    double prev = 0;
    for (std::size_t size : {99, 105, 110, 120, 140, 512}) {
        const double r = compression_ratio(train_bpe(corpus, size), corpus);
        EXPECT_GE(r, prev) << size;
        prev = r;
    }
}
