#include "otasizer/checkpoint.hpp"
#include "otasizer/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace otasizer;

namespace {

ModelConfig tiny(int vocab) {
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    c.d_ff = 16;
    c.dropout = 0;
    c.max_len = 16;
    c.vocab_size = vocab;
    return c;
}

std::vector<char> flags(int vocab, std::initializer_list<int> numeric) {
    std::vector<char> f(static_cast<std::size_t>(vocab), 0);
    for (int i : numeric) f[static_cast<std::size_t>(i)] = 1;
    return f;
}

} // namespace

TEST(Attention, MatchesHandComputedValues) {
    nn::Mat<double> q = nn::Mat<double>::Identity(2, 2), v(2, 2);
    v << 1, 2, 3, 4;
    const auto out = nn::attention(q, q, v, {});
    EXPECT_NEAR(out(0, 0), 1.6604769, 1e-7);
    EXPECT_NEAR(out(0, 1), 2.6604769, 1e-7);
    EXPECT_NEAR(out(1, 0), 2.3395231, 1e-7);
    EXPECT_NEAR(out(1, 1), 3.3395231, 1e-7);
}

TEST(Attention, RowsAreDistributionsAndMaskBlocks) {
    nn::Mat<double> q = nn::Mat<double>::Random(4, 3), k = nn::Mat<double>::Random(5, 3), v = nn::Mat<double>::Random(5, 2);
    nn::Mat<double> mask = nn::Mat<double>::Zero(4, 5);
    mask(0, 4) = mask(1, 0) = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < 5; ++j) mask(3, j) = -std::numeric_limits<double>::infinity();
    nn::Mat<double> w;
    const auto out = nn::attention(q, k, v, mask, &w);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
    EXPECT_EQ(w(0, 4), 0.0);
    EXPECT_EQ(w(1, 0), 0.0);
    EXPECT_EQ(out.row(3).norm(), 0.0);
}

TEST(Attention, ShapeMismatchThrows) {
    nn::Mat<double> a(2, 3), b(2, 4), c(3, 3);
    try {
        nn::attention(a, b, a, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::ShapeMismatch);
    }
    EXPECT_THROW(nn::attention(a, a, c, {}), Error);
    EXPECT_THROW(nn::attention(a, a, a, nn::Mat<double>::Zero(3, 3)), Error);
}

TEST(Transformer, ConfigValidation) {
    auto c = tiny(12);
    c.n_heads = 3;
    EXPECT_THROW(Transformer<double>(c, flags(12, {})), Error);
    EXPECT_THROW(Transformer<double>(tiny(12), flags(11, {})), Error);
}

TEST(Transformer, ZeroParametersGiveUniformLoss) {
    const int V = 12;
    Transformer<double> m(tiny(V), flags(V, {5, 6}));
    // All parameters zero: every logit is zero.
    const double plain = m.loss_and_grad({{{4, 7}, {9, 10}}}, nullptr, nullptr);
    EXPECT_NEAR(plain, std::log(V), 1e-12);
    // Two numeric targets weighted 1.2 plus EOS at 1.
    const double numeric = m.loss_and_grad({{{4, 7}, {5, 6}}}, nullptr, nullptr);
    EXPECT_NEAR(numeric, (2 * 1.2 + 1) / 3 * std::log(V), 1e-12);
}

TEST(Transformer, GradientMatchesFiniteDifferences) {
    Transformer<double> m(tiny(12), flags(12, {5, 6}));
    m.init(3);
    const std::vector<Example> b{{{4, 5, 6, 7, 8}, {9, 5, 10, 4}}, {{6, 7, 0, 0}, {11, 6}}};
    nn::FlatVec<double> g;
    m.loss_and_grad(b, &g, nullptr);
    auto& p = m.params();
    double worst = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double o = p[i], h = 1e-5;
        p[i] = o + h;
        const double lp = m.loss_and_grad(b, nullptr, nullptr);
        p[i] = o - h;
        const double lm = m.loss_and_grad(b, nullptr, nullptr);
        p[i] = o;
        const double num = (lp - lm) / (2 * h), den = std::max(std::abs(num), std::abs(g[i]));
        if (den > 1e-8) worst = std::max(worst, std::abs(num - g[i]) / den);
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Transformer, PaddingDoesNotChangeLogits) {
    Transformer<double> m(tiny(12), flags(12, {}));
    m.init(4);
    const auto a = m.logits({4, 5, 6}, {1, 7, 8});
    const auto b = m.logits({4, 5, 6, 0, 0}, {1, 7, 8});
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Transformer, DecoderIsCausal) {
    Transformer<double> m(tiny(12), flags(12, {}));
    m.init(5);
    const auto a = m.logits({4, 5, 6}, {1, 7, 8, 9});
    const auto b = m.logits({4, 5, 6}, {1, 7, 10, 11});
    EXPECT_LT((a.topRows(2) - b.topRows(2)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT((a.row(2) - b.row(2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Transformer, PackedBatchMatchesSingleExamples) {
    Transformer<double> m(tiny(12), flags(12, {5}));
    m.init(6);
    const Example x{{4, 5, 6}, {7, 8}}, y{{9, 10, 11, 4, 5}, {6, 5, 4}};
    std::size_t nx = 0, ny = 0, nb = 0;
    const double lx = m.loss_and_grad({x}, nullptr, nullptr, &nx);
    const double ly = m.loss_and_grad({y}, nullptr, nullptr, &ny);
    const double lb = m.loss_and_grad({x, y}, nullptr, nullptr, &nb);
    EXPECT_EQ(nb, nx + ny);
    EXPECT_NEAR(lb, (lx * static_cast<double>(nx) + ly * static_cast<double>(ny)) / static_cast<double>(nb), 1e-12);
}

TEST(Transformer, GreedyMatchesFullForward) {
    Transformer<double> m(tiny(12), flags(12, {}));
    m.init(7);
    const std::vector<int> src{4, 5, 6};
    const auto out = m.greedy(src, 10);
    std::vector<int> din{kBos};
    din.insert(din.end(), out.begin(), out.end());
    const auto lg = m.logits(src, din);
    for (std::size_t t = 0; t < out.size(); ++t) {
        Eigen::Index k;
        lg.row(static_cast<Eigen::Index>(t)).maxCoeff(&k);
        EXPECT_EQ(k, out[t]) << t;
    }
}

TEST(Transformer, TooLongSequenceThrows) {
    Transformer<double> m(tiny(12), flags(12, {}));
    try {
        m.logits(std::vector<int>(17, 4), {1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::SequenceTooLong);
    }
}

TEST(Transformer, DropoutOnlyWhenRequested) {
    auto c = tiny(12);
    c.dropout = 0.5;
    Transformer<double> m(c, flags(12, {}));
    m.init(8);
    const std::vector<Example> b{{{4, 5, 6}, {7, 8}}};
    const double a = m.loss_and_grad(b, nullptr, nullptr);
    EXPECT_EQ(a, m.loss_and_grad(b, nullptr, nullptr));
    nn::DropoutRng r1(1), r2(1);
    const double d1 = m.loss_and_grad(b, nullptr, &r1);
    EXPECT_EQ(d1, m.loss_and_grad(b, nullptr, &r2));
    EXPECT_NE(d1, a);
}

TEST(Checkpoint, RoundTripPreservesParameters) {
    const Vocab v = train_bpe({"gmM1 605uSM1", "gmM1 12uSM1"}, 200);
    auto c = tiny(static_cast<int>(v.size()));
    Transformer<float> m(c, numeric_flags(v));
    m.init(9);
    const auto bytes = checkpoint_bytes(m, v, {{"epoch", 3}});
    const Checkpoint ck = parse_checkpoint(bytes);
    EXPECT_EQ(ck.header.at("epoch"), 3);
    EXPECT_EQ(ck.vocab.hash(), v.hash());
    const auto back = ck.model<float>();
    EXPECT_EQ(back.params(), m.params());
    EXPECT_EQ(checkpoint_bytes(back, ck.vocab, {{"epoch", 3}}), bytes);
    const auto src = v.encode("gmM1").ids;
    EXPECT_EQ(back.greedy(src, 8), m.greedy(src, 8));
}

TEST(Checkpoint, CorruptFilesRejected) {
    const Vocab v;
    Transformer<float> m(tiny(static_cast<int>(v.size())), numeric_flags(v));
    const auto bytes = checkpoint_bytes(m, v);
    auto expect_bad = [](const std::string& b) {
        try {
            parse_checkpoint(b);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), Errc::BadFormat);
        }
    };
    expect_bad("OTACKPT0" + bytes.substr(8));
    expect_bad(bytes.substr(0, bytes.size() - 8));
    expect_bad(bytes.substr(0, 12));
}

TEST(Training, MemorizesTinyDataset) {
    const Vocab v = train_bpe({"FP gmM1", "FP 605uSM1", "DV IdM1", "DV 23.6uAM1"}, 200);
    const auto ex = make_examples(v, {"FP gmM1", "DV IdM1"}, {"FP 605uSM1", "DV 23.6uAM1"});
    ModelConfig c;
    c.d_model = 32;
    c.n_heads = 2;
    c.n_layers = 1;
    c.d_ff = 64;
    c.dropout = 0;
    c.max_len = 32;
    c.vocab_size = static_cast<int>(v.size());
    Transformer<float> m(c, numeric_flags(v));
    m.init(1);
    TrainConfig tc;
    tc.epochs = 300;
    tc.batch_size = 2;
    tc.lr = 3e-3;
    const auto res = train(m, ex, {}, tc);
    EXPECT_LT(res.log.back().train_loss, res.log.front().train_loss);
    const Seq2Seq<float> s(v, m);
    EXPECT_EQ(s.infer("FP gmM1"), "FP 605uSM1");
    EXPECT_EQ(s.infer("DV IdM1"), "DV 23.6uAM1");
}

TEST(Training, DeterministicForFixedSeed) {
    const Vocab v;
    const auto ex = make_examples(v, {"ab", "cd", "ef"}, {"ba", "dc", "fe"});
    auto c = tiny(static_cast<int>(v.size()));
    c.dropout = 0.1;
    auto run = [&] {
        Transformer<float> m(c, numeric_flags(v));
        m.init(2);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 2;
        train(m, ex, ex, tc);
        return m.params();
    };
    EXPECT_EQ(run(), run());
}

TEST(Training, NonFiniteLossThrows) {
    const Vocab v;
    const auto ex = make_examples(v, {"ab"}, {"ba"});
    Transformer<float> m(tiny(static_cast<int>(v.size())), numeric_flags(v));
    m.init(2);
    std::fill(m.params().begin(), m.params().end(), std::numeric_limits<float>::quiet_NaN());
    TrainConfig tc;
    tc.epochs = 1;
    try {
        train(m, ex, {}, tc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), Errc::NonFiniteLoss);
    }
}

TEST(Training, LogCsvHasHeaderAndRows) {
    const auto csv = training_log_csv({{1, 2.5, 3.0, 1e-4}, {2, 2.0, 2.5, 1e-4}});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,lr");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
