#pragma once

// Encoder-decoder transformer with hand-written backpropagation.
//
// Post-LN blocks, sinusoidal positions, embeddings shared between both inputs
// and the output projection. Batches are packed: the rows of every sequence
// in a batch are stacked without padding and attention runs per segment.

#include "otasizer/error.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace otasizer {

struct ModelConfig {
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 512;
    double dropout = 0.1;
    int max_len = 512;
    int vocab_size = 0;
    double numeric_weight = 1.2;

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw Error(Errc::ShapeMismatch, "d_model must be a positive multiple of n_heads");
        if (n_layers <= 0 || d_ff <= 0 || max_len <= 1 || vocab_size <= 0)
            throw Error(Errc::ShapeMismatch, "model dimensions must be positive");
        if (!(dropout >= 0 && dropout < 1)) throw Error(Errc::OutOfRange, "dropout must lie in [0, 1)");
        if (!(numeric_weight >= 1)) throw Error(Errc::OutOfRange, "numeric_weight must be at least 1");
    }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"d_model", c.d_model}, {"n_heads", c.n_heads}, {"n_layers", c.n_layers}, {"d_ff", c.d_ff},
            {"dropout", c.dropout}, {"max_len", c.max_len}, {"vocab_size", c.vocab_size}, {"numeric_weight", c.numeric_weight}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model");
    c.n_heads = j.at("n_heads");
    c.n_layers = j.at("n_layers");
    c.d_ff = j.at("d_ff");
    c.dropout = j.at("dropout");
    c.max_len = j.at("max_len");
    c.vocab_size = j.at("vocab_size");
    c.numeric_weight = j.at("numeric_weight");
    return c;
}

namespace nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <class S>
using MapMat = Eigen::Map<Mat<S>>;
template <class S>
using CMapMat = Eigen::Map<const Mat<S>>;
template <class S>
using MapRow = Eigen::Map<Row<S>>;
template <class S>
using CMapRow = Eigen::Map<const Row<S>>;
// Parameter and gradient storage. A fixed base alignment keeps Eigen's
// vectorized reductions over mapped slots in the same order on every run.
template <class S>
using FlatVec = std::vector<S, Eigen::aligned_allocator<S>>;

inline constexpr double kLnEps = 1e-5;

/// softmax(Q Kᵀ/√d_k + mask)·V for one head. `mask` is additive (0 or -inf)
/// and may be empty. Rows whose keys are all masked produce zeros.
inline Mat<double> attention(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v, const Mat<double>& mask,
                             Mat<double>* weights = nullptr) {
    if (q.cols() != k.cols()) throw Error(Errc::ShapeMismatch, "Q and K widths differ");
    if (k.rows() != v.rows()) throw Error(Errc::ShapeMismatch, "K and V lengths differ");
    if (mask.size() && (mask.rows() != q.rows() || mask.cols() != k.rows()))
        throw Error(Errc::ShapeMismatch, "mask shape does not match the score matrix");
    Mat<double> p = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
    if (mask.size()) p += mask;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double m = p.row(i).maxCoeff();
        if (!std::isfinite(m)) {
            p.row(i).setZero();
            continue;
        }
        p.row(i) = (p.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    if (weights) *weights = p;
    return p * v;
}

struct Slot {
    std::string name;
    int rows = 0, cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct AttnIdx {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LnIdx {
    std::size_t g, b;
};
struct FfnIdx {
    std::size_t w1, b1, w2, b2;
};
struct EncIdx {
    AttnIdx attn;
    LnIdx ln1;
    FfnIdx ffn;
    LnIdx ln2;
};
struct DecIdx {
    AttnIdx self;
    LnIdx ln1;
    AttnIdx cross;
    LnIdx ln2;
    FfnIdx ffn;
    LnIdx ln3;
};

/// Row ranges of the sequences stacked in a packed batch.
struct Segments {
    std::vector<int> off, len;
    int total = 0;
    void push(int n) {
        off.push_back(total);
        len.push_back(n);
        total += n;
    }
    std::size_t count() const { return off.size(); }
};

/// Deterministic source of dropout masks.
class DropoutRng {
public:
    explicit DropoutRng(std::uint64_t seed) : rng_(seed) {}
    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 rng_;
};

} // namespace nn

/// A training pair: encoder tokens and decoder target tokens (no BOS/EOS).
struct Example {
    std::vector<int> src, tgt;
};

template <class S>
class Transformer {
public:
    using Mat = nn::Mat<S>;
    using Row = nn::Row<S>;

    Transformer(const ModelConfig& cfg, std::vector<char> numeric) : cfg_(cfg), numeric_(std::move(numeric)) {
        cfg_.validate();
        if (numeric_.size() != static_cast<std::size_t>(cfg_.vocab_size))
            throw Error(Errc::ShapeMismatch, "numeric flags must cover the vocabulary");
        build_layout();
        params_.assign(total_, S(0));
        pe_ = positional_table(cfg_.max_len, cfg_.d_model);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<nn::Slot>& slots() const { return slots_; }
    nn::FlatVec<S>& params() { return params_; }
    const nn::FlatVec<S>& params() const { return params_; }
    std::size_t parameter_count() const { return total_; }
    const std::vector<char>& numeric() const { return numeric_; }

    /// Xavier-uniform matrices, N(0, 1/d) embeddings, unit LayerNorm gains.
    void init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        auto uni = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
        auto normal = [&] {
            const double u1 = std::max(uni(), 1e-300), u2 = uni();
            return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
        };
        std::fill(params_.begin(), params_.end(), S(0));
        for (auto const& s : slots_) {
            S* p = params_.data() + s.offset;
            const auto kind = s.name.substr(s.name.rfind('.') + 1);
            if (s.name == "embedding") {
                const double sd = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
                for (std::size_t i = 0; i < s.size(); ++i) p[i] = static_cast<S>(normal() * sd);
            } else if (kind == "g") {
                std::fill(p, p + s.size(), S(1));
            } else if (kind[0] == 'w') {
                const double a = std::sqrt(6.0 / (s.rows + s.cols));
                for (std::size_t i = 0; i < s.size(); ++i) p[i] = static_cast<S>((2 * uni() - 1) * a);
            }
        }
    }

    // ------------------------------------------------------------------
    // Training pass

    /// Weighted cross-entropy averaged over target tokens; gradients are
    /// accumulated into `grad` when given. `rng` enables dropout.
    double loss_and_grad(const std::vector<Example>& batch, nn::FlatVec<S>* grad, nn::DropoutRng* rng,
                         std::size_t* tokens = nullptr) const {
        Pass pass(*this, rng);
        pass.pack(batch);
        pass.forward();
        const double loss = pass.loss();
        if (tokens) *tokens = pass.count;
        if (grad) {
            if (grad->size() != total_) grad->assign(total_, S(0));
            pass.backward(grad->data());
        }
        return loss;
    }

    /// Logits for every decoder position (teacher forcing, no dropout).
    /// `dec_in` already starts with BOS. PAD tokens are masked as keys.
    Mat logits(const std::vector<int>& src, const std::vector<int>& dec_in) const {
        Pass pass(*this, nullptr);
        pass.pack_raw({src}, {dec_in});
        pass.forward();
        return pass.logits;
    }

    /// Greedy decoding with cached keys and values. Returns tokens before EOS.
    std::vector<int> greedy(const std::vector<int>& src, int max_new = -1) const;

private:

    // Parameter access -------------------------------------------------
    const S* ptr(std::size_t i) const { return params_.data() + slots_[i].offset; }
    nn::CMapMat<S> mat(std::size_t i) const { return {ptr(i), slots_[i].rows, slots_[i].cols}; }
    nn::CMapRow<S> row(std::size_t i) const { return {ptr(i), slots_[i].cols}; }
    nn::MapMat<S> gmat(S* g, std::size_t i) const { return {g + slots_[i].offset, slots_[i].rows, slots_[i].cols}; }
    nn::MapRow<S> grow(S* g, std::size_t i) const { return {g + slots_[i].offset, slots_[i].cols}; }

    std::size_t add(const std::string& name, int r, int c) {
        slots_.push_back({name, r, c, total_});
        total_ += slots_.back().size();
        return slots_.size() - 1;
    }

    nn::AttnIdx add_attn(const std::string& p) {
        const int d = cfg_.d_model;
        nn::AttnIdx a{};
        a.wq = add(p + ".wq", d, d);
        a.bq = add(p + ".bq", 1, d);
        a.wk = add(p + ".wk", d, d);
        a.bk = add(p + ".bk", 1, d);
        a.wv = add(p + ".wv", d, d);
        a.bv = add(p + ".bv", 1, d);
        a.wo = add(p + ".wo", d, d);
        a.bo = add(p + ".bo", 1, d);
        return a;
    }
    nn::LnIdx add_ln(const std::string& p) { return {add(p + ".g", 1, cfg_.d_model), add(p + ".b", 1, cfg_.d_model)}; }
    nn::FfnIdx add_ffn(const std::string& p) {
        return {add(p + ".w1", cfg_.d_model, cfg_.d_ff), add(p + ".b1", 1, cfg_.d_ff), add(p + ".w2", cfg_.d_ff, cfg_.d_model),
                add(p + ".b2", 1, cfg_.d_model)};
    }

    void build_layout() {
        emb_ = add("embedding", cfg_.vocab_size, cfg_.d_model);
        out_b_ = add("output.b", 1, cfg_.vocab_size);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const auto p = "enc" + std::to_string(l);
            nn::EncIdx e{};
            e.attn = add_attn(p + ".attn");
            e.ln1 = add_ln(p + ".ln1");
            e.ffn = add_ffn(p + ".ffn");
            e.ln2 = add_ln(p + ".ln2");
            enc_.push_back(e);
        }
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const auto p = "dec" + std::to_string(l);
            nn::DecIdx e{};
            e.self = add_attn(p + ".self");
            e.ln1 = add_ln(p + ".ln1");
            e.cross = add_attn(p + ".cross");
            e.ln2 = add_ln(p + ".ln2");
            e.ffn = add_ffn(p + ".ffn");
            e.ln3 = add_ln(p + ".ln3");
            dec_.push_back(e);
        }
    }

    static Mat positional_table(int n, int d) {
        Mat pe(n, d);
        for (int pos = 0; pos < n; ++pos)
            for (int i = 0; i < d; i += 2) {
                const double ang = pos / std::pow(10000.0, static_cast<double>(i) / d);
                pe(pos, i) = static_cast<S>(std::sin(ang));
                if (i + 1 < d) pe(pos, i + 1) = static_cast<S>(std::cos(ang));
            }
        return pe;
    }

    // Building blocks ---------------------------------------------------

    struct LnCache {
        Mat xhat;
        std::vector<S> rstd;
    };

    void ln_forward(const Mat& x, const nn::LnIdx& idx, Mat& y, LnCache* c) const {
        const auto g = row(idx.g);
        const auto b = row(idx.b);
        const Eigen::Index n = x.rows(), d = x.cols();
        y.resize(n, d);
        if (c) {
            c->xhat.resize(n, d);
            c->rstd.resize(static_cast<std::size_t>(n));
        }
        for (Eigen::Index r = 0; r < n; ++r) {
            const S mu = x.row(r).mean();
            const S var = (x.row(r).array() - mu).square().mean();
            const S rs = S(1) / std::sqrt(var + static_cast<S>(nn::kLnEps));
            const Row xh = (x.row(r).array() - mu) * rs;
            y.row(r) = xh.array() * g.array() + b.array();
            if (c) {
                c->xhat.row(r) = xh;
                c->rstd[static_cast<std::size_t>(r)] = rs;
            }
        }
    }

    void ln_backward(const Mat& dy, const nn::LnIdx& idx, const LnCache& c, Mat& dx, S* grad) const {
        const auto g = row(idx.g);
        auto dg = grow(grad, idx.g);
        auto db = grow(grad, idx.b);
        dx.resize(dy.rows(), dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r) {
            const auto xh = c.xhat.row(r).array();
            dg.array() += dy.row(r).array() * xh;
            db += dy.row(r);
            const Row dxh = dy.row(r).array() * g.array();
            const S m1 = dxh.mean();
            const S m2 = (dxh.array() * xh).mean();
            dx.row(r) = c.rstd[static_cast<std::size_t>(r)] * (dxh.array() - m1 - xh * m2);
        }
    }

    struct MhaCache {
        Mat xq, xkv, q, k, v, o;
        std::vector<Mat> p;
    };

    // Allowed key j for query i of one segment.
    static bool allowed(const std::vector<char>& kvalid, int ko, int i, int j, bool causal) {
        return kvalid[static_cast<std::size_t>(ko + j)] && (!causal || j <= i);
    }

    void mha_forward(const nn::AttnIdx& a, const Mat& xq, const nn::Segments& sq, const Mat& xkv, const nn::Segments& sk,
                     const std::vector<char>& kvalid, bool causal, Mat& out, MhaCache* c) const {
        const int d = cfg_.d_model, h = cfg_.n_heads, dk = d / h;
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
        Mat q = xq * mat(a.wq);
        q.rowwise() += row(a.bq);
        Mat k = xkv * mat(a.wk);
        k.rowwise() += row(a.bk);
        Mat v = xkv * mat(a.wv);
        v.rowwise() += row(a.bv);
        Mat o = Mat::Zero(xq.rows(), d);
        std::vector<Mat> ps(sq.count() * static_cast<std::size_t>(h));
        for (std::size_t s = 0; s < sq.count(); ++s) {
            const int qo = sq.off[s], tq = sq.len[s], ko = sk.off[s], tk = sk.len[s];
            if (tq == 0 || tk == 0) continue;
            for (int hh = 0; hh < h; ++hh) {
                Mat& p = ps[s * static_cast<std::size_t>(h) + static_cast<std::size_t>(hh)];
                p.noalias() = q.block(qo, hh * dk, tq, dk) * k.block(ko, hh * dk, tk, dk).transpose();
                for (int i = 0; i < tq; ++i) {
                    S mx = -std::numeric_limits<S>::infinity();
                    for (int j = 0; j < tk; ++j)
                        if (allowed(kvalid, ko, i, j, causal)) mx = std::max(mx, p(i, j) * scale);
                    if (!std::isfinite(mx)) {
                        p.row(i).setZero();
                        continue;
                    }
                    S sum = 0;
                    for (int j = 0; j < tk; ++j) {
                        const S e = allowed(kvalid, ko, i, j, causal) ? std::exp(p(i, j) * scale - mx) : S(0);
                        p(i, j) = e;
                        sum += e;
                    }
                    p.row(i) /= sum;
                }
                o.block(qo, hh * dk, tq, dk).noalias() = p * v.block(ko, hh * dk, tk, dk);
            }
        }
        out.noalias() = o * mat(a.wo);
        out.rowwise() += row(a.bo);
        if (c) {
            c->xq = xq;
            c->xkv = xkv;
            c->q = std::move(q);
            c->k = std::move(k);
            c->v = std::move(v);
            c->o = std::move(o);
            c->p = std::move(ps);
        }
    }

    // Accumulates into dxq and dxkv (which may alias for self-attention).
    void mha_backward(const nn::AttnIdx& a, const nn::Segments& sq, const nn::Segments& sk, const MhaCache& c, const Mat& dout,
                      Mat& dxq, Mat& dxkv, S* grad) const {
        const int d = cfg_.d_model, h = cfg_.n_heads, dk = d / h;
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
        gmat(grad, a.wo).noalias() += c.o.transpose() * dout;
        grow(grad, a.bo) += dout.colwise().sum();
        const Mat dobuf = dout * mat(a.wo).transpose();
        Mat dq = Mat::Zero(c.q.rows(), d), dk_ = Mat::Zero(c.k.rows(), d), dv = Mat::Zero(c.v.rows(), d);
        for (std::size_t s = 0; s < sq.count(); ++s) {
            const int qo = sq.off[s], tq = sq.len[s], ko = sk.off[s], tk = sk.len[s];
            if (tq == 0 || tk == 0) continue;
            for (int hh = 0; hh < h; ++hh) {
                const Mat& p = c.p[s * static_cast<std::size_t>(h) + static_cast<std::size_t>(hh)];
                const auto dob = dobuf.block(qo, hh * dk, tq, dk);
                Mat dp = dob * c.v.block(ko, hh * dk, tk, dk).transpose();
                dv.block(ko, hh * dk, tk, dk).noalias() += p.transpose() * dob;
                for (int i = 0; i < tq; ++i) {
                    const S dot = (dp.row(i).array() * p.row(i).array()).sum();
                    dp.row(i) = p.row(i).array() * (dp.row(i).array() - dot) * scale;
                }
                dq.block(qo, hh * dk, tq, dk).noalias() += dp * c.k.block(ko, hh * dk, tk, dk);
                dk_.block(ko, hh * dk, tk, dk).noalias() += dp.transpose() * c.q.block(qo, hh * dk, tq, dk);
            }
        }
        gmat(grad, a.wq).noalias() += c.xq.transpose() * dq;
        grow(grad, a.bq) += dq.colwise().sum();
        gmat(grad, a.wk).noalias() += c.xkv.transpose() * dk_;
        grow(grad, a.bk) += dk_.colwise().sum();
        gmat(grad, a.wv).noalias() += c.xkv.transpose() * dv;
        grow(grad, a.bv) += dv.colwise().sum();
        dxq.noalias() += dq * mat(a.wq).transpose();
        dxkv.noalias() += dk_ * mat(a.wk).transpose();
        dxkv.noalias() += dv * mat(a.wv).transpose();
    }

    struct FfnCache {
        Mat x, h;
    };

    void ffn_forward(const nn::FfnIdx& f, const Mat& x, Mat& y, FfnCache* c) const {
        Mat hdn = x * mat(f.w1);
        hdn.rowwise() += row(f.b1);
        hdn = hdn.cwiseMax(S(0));
        y.noalias() = hdn * mat(f.w2);
        y.rowwise() += row(f.b2);
        if (c) {
            c->x = x;
            c->h = std::move(hdn);
        }
    }

    void ffn_backward(const nn::FfnIdx& f, const FfnCache& c, const Mat& dy, Mat& dx, S* grad) const {
        gmat(grad, f.w2).noalias() += c.h.transpose() * dy;
        grow(grad, f.b2) += dy.colwise().sum();
        Mat dh = dy * mat(f.w2).transpose();
        dh = (c.h.array() > S(0)).select(dh, S(0));
        gmat(grad, f.w1).noalias() += c.x.transpose() * dh;
        grow(grad, f.b1) += dh.colwise().sum();
        dx.noalias() = dh * mat(f.w1).transpose();
    }

    // Forward/backward state of one packed batch.
    class Pass {
    public:
        Pass(const Transformer& m, nn::DropoutRng* rng) : m_(m), rng_(rng) {}

        void pack(const std::vector<Example>& batch) {
            std::vector<std::vector<int>> src, din;
            for (auto const& e : batch) {
                src.push_back(e.src);
                std::vector<int> in{1};
                in.insert(in.end(), e.tgt.begin(), e.tgt.end());
                din.push_back(std::move(in));
                std::vector<int> out = e.tgt;
                out.push_back(2);
                target.insert(target.end(), out.begin(), out.end());
            }
            pack_raw(src, din);
        }

        void pack_raw(const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& din) {
            for (auto const& s : src) {
                if (static_cast<int>(s.size()) > m_.cfg_.max_len)
                    throw Error(Errc::SequenceTooLong, "encoder sequence of " + std::to_string(s.size()) + " tokens");
                ssrc.push(static_cast<int>(s.size()));
                for (std::size_t i = 0; i < s.size(); ++i) {
                    src_ids.push_back(s[i]);
                    src_pos.push_back(static_cast<int>(i));
                    src_valid.push_back(s[i] != 0);
                }
            }
            for (auto const& s : din) {
                if (static_cast<int>(s.size()) > m_.cfg_.max_len)
                    throw Error(Errc::SequenceTooLong, "decoder sequence of " + std::to_string(s.size()) + " tokens");
                sdec.push(static_cast<int>(s.size()));
                for (std::size_t i = 0; i < s.size(); ++i) {
                    dec_ids.push_back(s[i]);
                    dec_pos.push_back(static_cast<int>(i));
                    dec_valid.push_back(s[i] != 0);
                }
            }
            for (int id : src_ids) check_id(id);
            for (int id : dec_ids) check_id(id);
        }

        void forward() {
            const int nl = m_.cfg_.n_layers;
            Mat x;
            embed(src_ids, src_pos, x, emb_mask_src);
            enc.resize(static_cast<std::size_t>(nl));
            for (int l = 0; l < nl; ++l) {
                auto& L = enc[static_cast<std::size_t>(l)];
                const auto& I = m_.enc_[static_cast<std::size_t>(l)];
                L.x = x;
                Mat a;
                m_.mha_forward(I.attn, x, ssrc, x, ssrc, src_valid, false, a, &L.attn);
                dropout(a, L.drop1);
                Mat y1;
                m_.ln_forward(x + a, I.ln1, y1, &L.ln1);
                Mat f;
                m_.ffn_forward(I.ffn, y1, f, &L.ffn);
                dropout(f, L.drop2);
                m_.ln_forward(y1 + f, I.ln2, x, &L.ln2);
            }
            memory = std::move(x);

            Mat y;
            embed(dec_ids, dec_pos, y, emb_mask_dec);
            dec.resize(static_cast<std::size_t>(nl));
            for (int l = 0; l < nl; ++l) {
                auto& L = dec[static_cast<std::size_t>(l)];
                const auto& I = m_.dec_[static_cast<std::size_t>(l)];
                Mat a;
                m_.mha_forward(I.self, y, sdec, y, sdec, dec_valid, true, a, &L.self);
                dropout(a, L.drop1);
                Mat y1;
                m_.ln_forward(y + a, I.ln1, y1, &L.ln1);
                Mat c;
                m_.mha_forward(I.cross, y1, sdec, memory, ssrc, src_valid, false, c, &L.cross);
                dropout(c, L.drop2);
                Mat y2;
                m_.ln_forward(y1 + c, I.ln2, y2, &L.ln2);
                Mat f;
                m_.ffn_forward(I.ffn, y2, f, &L.ffn);
                dropout(f, L.drop3);
                m_.ln_forward(y2 + f, I.ln3, y, &L.ln3);
            }
            top = std::move(y);
            logits.noalias() = top * m_.mat(m_.emb_).transpose();
            logits.rowwise() += m_.row(m_.out_b_);
        }

        // Weighted cross-entropy; also prepares dlogits.
        double loss() {
            const Eigen::Index n = logits.rows(), v = logits.cols();
            if (static_cast<Eigen::Index>(target.size()) != n) throw Error(Errc::ShapeMismatch, "targets do not match decoder rows");
            dlogits = Mat::Zero(n, v);
            count = 0;
            for (int t : target)
                if (t != 0) ++count;
            if (count == 0) return 0.0;
            double total = 0;
            for (Eigen::Index r = 0; r < n; ++r) {
                const int t = target[static_cast<std::size_t>(r)];
                if (t == 0) continue;
                const S mx = logits.row(r).maxCoeff();
                const Row e = (logits.row(r).array() - mx).exp();
                const S z = e.sum();
                const double w = m_.numeric_[static_cast<std::size_t>(t)] ? m_.cfg_.numeric_weight : 1.0;
                total += w * (std::log(static_cast<double>(z)) - static_cast<double>(logits(r, t) - mx));
                dlogits.row(r) = e / z;
                dlogits(r, t) -= S(1);
                dlogits.row(r) *= static_cast<S>(w / static_cast<double>(count));
            }
            return total / static_cast<double>(count);
        }

        void backward(S* grad) {
            const int nl = m_.cfg_.n_layers;
            m_.gmat(grad, m_.emb_).noalias() += dlogits.transpose() * top;
            m_.grow(grad, m_.out_b_) += dlogits.colwise().sum();
            Mat dy = dlogits * m_.mat(m_.emb_);
            Mat dmem = Mat::Zero(memory.rows(), memory.cols());
            for (int l = nl; l-- > 0;) {
                auto& L = dec[static_cast<std::size_t>(l)];
                const auto& I = m_.dec_[static_cast<std::size_t>(l)];
                Mat ds3;
                m_.ln_backward(dy, I.ln3, L.ln3, ds3, grad);
                Mat df = ds3;
                undrop(df, L.drop3);
                Mat dy2;
                m_.ffn_backward(I.ffn, L.ffn, df, dy2, grad);
                dy2 += ds3;
                Mat ds2;
                m_.ln_backward(dy2, I.ln2, L.ln2, ds2, grad);
                Mat dc = ds2;
                undrop(dc, L.drop2);
                Mat dy1 = ds2;
                m_.mha_backward(I.cross, sdec, ssrc, L.cross, dc, dy1, dmem, grad);
                Mat ds1;
                m_.ln_backward(dy1, I.ln1, L.ln1, ds1, grad);
                Mat da = ds1;
                undrop(da, L.drop1);
                Mat dx = ds1;
                m_.mha_backward(I.self, sdec, sdec, L.self, da, dx, dx, grad);
                dy = std::move(dx);
            }
            embed_backward(dec_ids, dy, emb_mask_dec, grad);

            Mat dx = std::move(dmem);
            for (int l = nl; l-- > 0;) {
                auto& L = enc[static_cast<std::size_t>(l)];
                const auto& I = m_.enc_[static_cast<std::size_t>(l)];
                Mat ds2;
                m_.ln_backward(dx, I.ln2, L.ln2, ds2, grad);
                Mat df = ds2;
                undrop(df, L.drop2);
                Mat dy1;
                m_.ffn_backward(I.ffn, L.ffn, df, dy1, grad);
                dy1 += ds2;
                Mat ds1;
                m_.ln_backward(dy1, I.ln1, L.ln1, ds1, grad);
                Mat da = ds1;
                undrop(da, L.drop1);
                Mat dxin = ds1;
                m_.mha_backward(I.attn, ssrc, ssrc, L.attn, da, dxin, dxin, grad);
                dx = std::move(dxin);
            }
            embed_backward(src_ids, dx, emb_mask_src, grad);
        }

        nn::Segments ssrc, sdec;
        std::vector<int> src_ids, src_pos, dec_ids, dec_pos, target;
        std::vector<char> src_valid, dec_valid;
        Mat memory, top, logits, dlogits;
        std::size_t count = 0;

    private:
        struct EncLayer {
            Mat x, drop1, drop2;
            MhaCache attn;
            LnCache ln1, ln2;
            FfnCache ffn;
        };
        struct DecLayer {
            Mat drop1, drop2, drop3;
            MhaCache self, cross;
            LnCache ln1, ln2, ln3;
            FfnCache ffn;
        };

        void check_id(int id) const {
            if (id < 0 || id >= m_.cfg_.vocab_size) throw Error(Errc::UnknownTokenId, "token id " + std::to_string(id));
        }

        void embed(const std::vector<int>& ids, const std::vector<int>& pos, Mat& x, Mat& mask) {
            const auto e = m_.mat(m_.emb_);
            const S sc = static_cast<S>(std::sqrt(static_cast<double>(m_.cfg_.d_model)));
            x.resize(static_cast<Eigen::Index>(ids.size()), m_.cfg_.d_model);
            for (std::size_t i = 0; i < ids.size(); ++i)
                x.row(static_cast<Eigen::Index>(i)) = e.row(ids[i]) * sc + m_.pe_.row(pos[i]);
            dropout(x, mask);
        }

        void embed_backward(const std::vector<int>& ids, Mat& dx, const Mat& mask, S* grad) const {
            undrop(dx, mask);
            auto ge = m_.gmat(grad, m_.emb_);
            const S sc = static_cast<S>(std::sqrt(static_cast<double>(m_.cfg_.d_model)));
            for (std::size_t i = 0; i < ids.size(); ++i) ge.row(ids[i]) += dx.row(static_cast<Eigen::Index>(i)) * sc;
        }

        void dropout(Mat& x, Mat& mask) {
            const double p = m_.cfg_.dropout;
            if (!rng_ || p <= 0) return;
            mask.resize(x.rows(), x.cols());
            const S keep = static_cast<S>(1.0 / (1.0 - p));
            for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng_->uniform() < p ? S(0) : keep;
            x.array() *= mask.array();
        }

        static void undrop(Mat& dx, const Mat& mask) {
            if (mask.size()) dx.array() *= mask.array();
        }

        const Transformer& m_;
        nn::DropoutRng* rng_;
        Mat emb_mask_src, emb_mask_dec;
        std::vector<EncLayer> enc;
        std::vector<DecLayer> dec;
    };

    ModelConfig cfg_;
    std::vector<char> numeric_;
    std::vector<nn::Slot> slots_;
    std::size_t total_ = 0;
    nn::FlatVec<S> params_;
    Mat pe_;
    std::size_t emb_ = 0, out_b_ = 0;
    std::vector<nn::EncIdx> enc_;
    std::vector<nn::DecIdx> dec_;
};

template <class S>
std::vector<int> Transformer<S>::greedy(const std::vector<int>& src, int max_new) const {
    const int d = cfg_.d_model, h = cfg_.n_heads, dk = d / h;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
    if (max_new < 0 || max_new > cfg_.max_len) max_new = cfg_.max_len;

    Pass enc(*this, nullptr);
    enc.pack_raw({src}, {});
    // Encoder only: run the full forward with an empty decoder segment list.
    Mat x;
    {
        const auto e = mat(emb_);
        const S sc = static_cast<S>(std::sqrt(static_cast<double>(d)));
        x.resize(static_cast<Eigen::Index>(src.size()), d);
        for (std::size_t i = 0; i < src.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = e.row(src[i]) * sc + pe_.row(static_cast<Eigen::Index>(i));
        for (auto const& I : enc_) {
            Mat a;
            mha_forward(I.attn, x, enc.ssrc, x, enc.ssrc, enc.src_valid, false, a, nullptr);
            Mat y1;
            ln_forward(x + a, I.ln1, y1, nullptr);
            Mat f;
            ffn_forward(I.ffn, y1, f, nullptr);
            ln_forward(y1 + f, I.ln2, x, nullptr);
        }
    }
    const Mat& memory = x;
    const std::vector<char>& mvalid = enc.src_valid;
    const int tm = static_cast<int>(src.size());

    std::vector<Mat> kc, vc, ks, vs;
    for (auto const& I : dec_) {
        Mat k = memory * mat(I.cross.wk);
        k.rowwise() += row(I.cross.bk);
        Mat v = memory * mat(I.cross.wv);
        v.rowwise() += row(I.cross.bv);
        kc.push_back(std::move(k));
        vc.push_back(std::move(v));
        ks.emplace_back(max_new, d);
        vs.emplace_back(max_new, d);
    }

    auto attend = [&](const Row& q, const Mat& k, const Mat& v, int n, const std::vector<char>* valid) {
        Row o = Row::Zero(d);
        for (int hh = 0; hh < h; ++hh) {
            Row p(n);
            S mx = -std::numeric_limits<S>::infinity();
            for (int j = 0; j < n; ++j) {
                p(j) = q.segment(hh * dk, dk).dot(k.row(j).segment(hh * dk, dk));
                if (!valid || (*valid)[static_cast<std::size_t>(j)]) mx = std::max(mx, p(j) * scale);
            }
            if (!std::isfinite(mx)) continue;
            S sum = 0;
            for (int j = 0; j < n; ++j) {
                const S e = (!valid || (*valid)[static_cast<std::size_t>(j)]) ? std::exp(p(j) * scale - mx) : S(0);
                p(j) = e;
                sum += e;
            }
            p /= sum;
            o.segment(hh * dk, dk) = p * v.block(0, hh * dk, n, dk);
        }
        return o;
    };

    const auto e = mat(emb_);
    const S sc = static_cast<S>(std::sqrt(static_cast<double>(d)));
    std::vector<int> out;
    int tok = 1;
    for (int t = 0; t < max_new; ++t) {
        Mat y = e.row(tok) * sc + pe_.row(t);
        for (std::size_t l = 0; l < dec_.size(); ++l) {
            const auto& I = dec_[l];
            Row q = y * mat(I.self.wq) + row(I.self.bq);
            ks[l].row(t) = y * mat(I.self.wk) + row(I.self.bk);
            vs[l].row(t) = y * mat(I.self.wv) + row(I.self.bv);
            Mat a = attend(q, ks[l], vs[l], t + 1, nullptr) * mat(I.self.wo) + row(I.self.bo);
            Mat y1;
            ln_forward(y + a, I.ln1, y1, nullptr);
            Row q2 = y1 * mat(I.cross.wq) + row(I.cross.bq);
            Mat c = attend(q2, kc[l], vc[l], tm, &mvalid) * mat(I.cross.wo) + row(I.cross.bo);
            Mat y2;
            ln_forward(y1 + c, I.ln2, y2, nullptr);
            Mat f;
            ffn_forward(I.ffn, y2, f, nullptr);
            ln_forward(y2 + f, I.ln3, y, nullptr);
        }
        const Row lg = y * e.transpose() + row(out_b_);
        Eigen::Index best = 0;
        lg.maxCoeff(&best);
        if (best == 2) break;
        out.push_back(static_cast<int>(best));
        tok = static_cast<int>(best);
    }
    return out;
}

} // namespace otasizer
