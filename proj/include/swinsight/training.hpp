#pragma once

// Cross-entropy objective, bias-corrected Adam, and the train / evaluate loops.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "batch.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "swin.hpp"

namespace swinsight {

inline constexpr double kLogClamp = 1e-12;

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ConfigError("learning_rate must be a finite non-negative number");
        }
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
            throw ConfigError("adam betas must lie in [0, 1)");
        }
        if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    }
};

/// Mean over the batch of -log(max(p_true, 1e-12)) where p = softmax(logits).
/// Gradient wrt logits is (p - onehot(y)) / B away from the clamp.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy expects [B, C] logits, got " + to_string(s));
    const std::size_t b = s[0], c = s[1];
    if (labels.size() != b) throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                            " outside [0, " + std::to_string(c) + ")");
        }
    }
    auto probs = softmax(logits, -1);
    const auto& p = probs.value();
    T loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        loss -= std::log(std::max(p[i * c + labels[i]], static_cast<T>(kLogClamp)));
    }
    loss /= static_cast<T>(b);
    return logits.tape().record("nll", Tensor<T>::scalar(loss), {probs}, [ip = probs.id(), labels, b, c](Tape<T>& t, std::size_t self) {
        Tensor<T>* acc = t.accumulator(ip);
        if (!acc) return;
        const T g = t.out_grad(self)[0];
        const auto& p = t.value(ip);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t j = i * c + labels[i];
            if (p[j] > static_cast<T>(kLogClamp)) (*acc)[j] -= g / (static_cast<T>(b) * p[j]);
        }
    });
}

template <typename T>
struct AdamState {
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter; increments state.step.
template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& cfg) {
    for (const auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) throw ShapeError("adam_step: no gradient for '" + name + "'");
        if (g->second.shape() != p.shape()) {
            throw ShapeError("adam_step: gradient shape " + to_string(g->second.shape()) + " != parameter shape " +
                             to_string(p.shape()) + " for '" + name + "'");
        }
        auto m = state.m.find(name);
        if (m != state.m.end() && m->second.shape() != p.shape()) throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(cfg.adam_beta1), b2 = static_cast<T>(cfg.adam_beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.adam_beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.adam_beta2, t));
    const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_eps);
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name).data();
        auto& m = state.m.try_emplace(name, p.shape()).first->second;
        auto& v = state.v.try_emplace(name, p.shape()).first->second;
        auto pd = p.data();
        auto md = m.data();
        auto vd = v.data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            md[i] = b1 * md[i] + (T(1) - b1) * g[i];
            vd[i] = b2 * vd[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = md[i] / c1;
            const T vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        if (!p.all_finite()) throw NumericError("adam_step: parameter '" + name + "' became non-finite");
    }
}

struct EpochRecord {
    double train_loss = 0;
    double train_accuracy = 0;
    double val_loss = 0;
    double val_accuracy = 0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
};

struct EpochStats {
    double loss = 0;
    double accuracy = 0;
};

/// Argmax over a row of logits; exact ties go to the lower class index.
template <typename T>
int predicted_class(const T* row, std::size_t classes) {
    int best = 0;
    for (std::size_t j = 1; j < classes; ++j) {
        if (row[j] > row[best]) best = static_cast<int>(j);
    }
    return best;
}

/// One pass over `source` (anything with `std::optional<ImageBatch<T>> next()`),
/// taking an Adam step per batch. Loss and accuracy are averaged over samples
/// using the pre-step logits of each batch.
template <typename T, typename Source>
EpochStats train_epoch(SwinModel<T>& model, Source& source, AdamState<T>& state, const TrainConfig& cfg,
                       Rng* dropout_rng = nullptr) {
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    while (auto batch = source.next()) {
        Tape<T> tape;
        const auto bound = model.bind(tape, true);
        ForwardOptions opt;
        opt.training = true;
        opt.dropout_rng = dropout_rng;
        auto logits = model.logits(bound, tape.constant(batch->images), opt);
        auto loss = cross_entropy(logits, batch->labels);
        tape.backward(loss);

        std::map<std::string, Tensor<T>> grads;
        for (const auto& [name, var] : bound.vars) grads.emplace(name, tape.grad(var));

        const auto& lv = logits.value();
        for (std::size_t i = 0; i < batch->size(); ++i) {
            if (predicted_class(lv.data().data() + i * kNumClasses, kNumClasses) == batch->labels[i]) ++correct;
        }
        loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(batch->size());
        seen += batch->size();
        adam_step(model.parameters(), grads, state, cfg);
    }
    if (seen == 0) throw DataError("train_epoch: data source produced no batches");
    return {loss_sum / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(seen)};
}

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    /// Softmax probabilities, row-major [n, 2]; column 1 is the CGI score.
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::size_t> indices;

    std::size_t size() const noexcept { return labels.size(); }
    double cgi_score(std::size_t i) const { return scores[i * kNumClasses + 1]; }
    std::vector<double> cgi_scores() const {
        std::vector<double> out(size());
        for (std::size_t i = 0; i < size(); ++i) out[i] = cgi_score(i);
        return out;
    }
};

/// Eval-mode pass: no dropout, no parameter mutation.
template <typename T, typename Source>
EvalResult evaluate(const SwinModel<T>& model, Source& source) {
    EvalResult r;
    double loss_sum = 0;
    std::size_t correct = 0;
    while (auto batch = source.next()) {
        Tape<T> tape;
        const auto bound = model.bind(tape, false);
        auto logits = model.logits(bound, tape.constant(batch->images));
        auto loss = cross_entropy(logits, batch->labels);
        loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(batch->size());
        const auto& lv = logits.value();
        for (std::size_t i = 0; i < batch->size(); ++i) {
            const T* row = lv.data().data() + i * kNumClasses;
            if (predicted_class(row, kNumClasses) == batch->labels[i]) ++correct;
            const double l0 = row[0], l1 = row[1];
            const double mx = std::max(l0, l1);
            const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
            r.scores.push_back(e0 / (e0 + e1));
            r.scores.push_back(e1 / (e0 + e1));
            r.labels.push_back(batch->labels[i]);
            r.indices.push_back(batch->indices[i]);
        }
    }
    if (r.labels.empty()) throw DataError("evaluate: data source produced no batches");
    r.loss = loss_sum / static_cast<double>(r.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.size());
    return r;
}

}  // namespace swinsight
