#pragma once

// Teacher-forced training with Adam and plateau learning-rate decay.

#include "otasizer/error.hpp"
#include "otasizer/model.hpp"
#include "otasizer/shuffle.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace otasizer {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 16;
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-9;
    double decay = 0.5; // multiplicative lr decay on a validation plateau
    int patience = 3;
    std::uint64_t seed = 1;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},   {"beta1", c.beta1},
            {"beta2", c.beta2},   {"adam_eps", c.adam_eps},     {"decay", c.decay}, {"patience", c.patience},
            {"seed", c.seed}};
}

struct EpochLog {
    int epoch = 0;
    double train_loss = 0, val_loss = 0, lr = 0;
};

/// Token-weighted mean loss over a dataset, without dropout.
template <class S>
double evaluate(const Transformer<S>& m, const std::vector<Example>& data, int batch_size = 32) {
    double sum = 0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < data.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(data.size(), i + static_cast<std::size_t>(batch_size));
        const std::vector<Example> batch(data.begin() + static_cast<std::ptrdiff_t>(i), data.begin() + static_cast<std::ptrdiff_t>(end));
        std::size_t n = 0;
        const double l = m.loss_and_grad(batch, nullptr, nullptr, &n);
        sum += l * static_cast<double>(n);
        tokens += n;
    }
    return tokens ? sum / static_cast<double>(tokens) : 0.0;
}

template <class S>
class Adam {
public:
    Adam(std::size_t n, const TrainConfig& c) : m_(n, S(0)), v_(n, S(0)), c_(c) {}

    void step(nn::FlatVec<S>& p, const nn::FlatVec<S>& g, double lr) {
        ++t_;
        const double b1 = c_.beta1, b2 = c_.beta2;
        const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
        const S step = static_cast<S>(lr * std::sqrt(c2) / c1);
        const S eps = static_cast<S>(c_.adam_eps * std::sqrt(c2));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m_[i] = static_cast<S>(b1) * m_[i] + static_cast<S>(1 - b1) * g[i];
            v_[i] = static_cast<S>(b2) * v_[i] + static_cast<S>(1 - b2) * g[i] * g[i];
            p[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
        }
    }

private:
    std::vector<S> m_, v_;
    TrainConfig c_;
    int t_ = 0;
};

template <class S>
struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double best_val = 0;
};

/// Trains in place; on return the model holds the parameters with the best
/// validation loss. `on_epoch` sees every log row as it is produced.
template <class S>
TrainResult<S> train(Transformer<S>& m, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                     const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (train_set.empty()) throw Error(Errc::EmptyDataset, "no training examples");
    Adam<S> opt(m.parameter_count(), cfg);
    nn::DropoutRng drop(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult<S> res;
    nn::FlatVec<S> best = m.params(), grad;
    double lr = cfg.lr, best_val = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        seeded_shuffle(order, cfg.seed + static_cast<std::uint64_t>(epoch));
        double sum = 0;
        std::size_t tokens = 0;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Example> batch;
            for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size)); ++k)
                batch.push_back(train_set[order[k]]);
            grad.assign(m.parameter_count(), S(0));
            std::size_t n = 0;
            const double l = m.loss_and_grad(batch, &grad, &drop, &n);
            if (!std::isfinite(l))
                throw Error(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(i) +
                                                     ": loss " + std::to_string(l));
            opt.step(m.params(), grad, lr);
            sum += l * static_cast<double>(n);
            tokens += n;
        }
        EpochLog row{epoch, sum / static_cast<double>(tokens), val_set.empty() ? 0.0 : evaluate(m, val_set), lr};
        const double score = val_set.empty() ? row.train_loss : row.val_loss;
        if (!std::isfinite(score)) throw Error(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + ": non-finite validation loss");
        if (score < best_val) {
            best_val = score;
            best = m.params();
            res.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            lr *= cfg.decay;
            stale = 0;
        }
        res.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    m.params() = best;
    res.best_val = best_val;
    return res;
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_loss,lr\n";
    char buf[128];
    for (auto const& r : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
        out += buf;
    }
    return out;
}

} // namespace otasizer
