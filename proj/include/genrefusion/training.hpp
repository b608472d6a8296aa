#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "genrefusion/errors.hpp"
#include "genrefusion/models.hpp"
#include "genrefusion/optimizer.hpp"
#include "genrefusion/pipeline.hpp"
#include "genrefusion/rng.hpp"
#include "genrefusion/tensor.hpp"

namespace genrefusion {

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    AdamOptions adam;
    std::size_t patience = 5;  // epochs without val-loss improvement; 0 disables
};

struct EpochStats {
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_accuracy;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;  // 0-based index into history
};

namespace detail {

inline std::vector<std::size_t> batch_indices(std::size_t begin, std::size_t end,
                                              const std::vector<std::size_t>& order) {
    return {order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end)};
}

inline std::vector<EncodedText> gather_text(const ExampleSet& data,
                                            const std::vector<std::size_t>& idx) {
    std::vector<EncodedText> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data.text[i]);
    return out;
}

inline std::vector<int> gather_labels(const ExampleSet& data,
                                      const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data.labels[i]);
    return out;
}

inline std::size_t count_top1_hits(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t rows = logits.dim(0), k = logits.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = logits.data() + i * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return hits;
}

}  // namespace detail

// Forward a whole example set in inference mode (no graph recorded) and
// return the [NxK] probability matrix.
inline Tensor predict_probs(const GenreClassifier& model, const ExampleSet& data,
                            std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("predict: empty example set");
    const std::size_t k = model.config().num_classes;
    Tensor all = Tensor::zeros({data.size(), k});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, data.size());
        const auto idx = detail::batch_indices(begin, end, order);
        Tape tape(false);
        std::vector<EncodedText> text;
        Tensor images;
        if (model.uses_text()) text = detail::gather_text(data, idx);
        if (model.uses_image()) images = stack_images(data.images, idx);
        Tensor probs = model.forward_probs(tape, model.uses_text() ? &text : nullptr,
                                           model.uses_image() ? &images : nullptr);
        std::copy(probs.values().begin(), probs.values().end(), all.data() + begin * k);
    }
    return all;
}

// Mean per-example loss and top-1 accuracy in inference mode.
inline std::pair<double, double> evaluate_loss_accuracy(const GenreClassifier& model,
                                                        const ExampleSet& data,
                                                        std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("evaluate: empty example set");
    double loss_sum = 0.0;
    std::size_t hits = 0;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, data.size());
        const auto idx = detail::batch_indices(begin, end, order);
        Tape tape(false);
        std::vector<EncodedText> text;
        Tensor images;
        if (model.uses_text()) text = detail::gather_text(data, idx);
        if (model.uses_image()) images = stack_images(data.images, idx);
        const auto labels = detail::gather_labels(data, idx);
        Tensor logits = model.forward_logits(tape, model.uses_text() ? &text : nullptr,
                                             model.uses_image() ? &images : nullptr);
        Tensor loss = tape.sparse_cross_entropy(logits, labels);
        loss_sum += loss.at(0) * static_cast<double>(idx.size());
        hits += detail::count_top1_hits(logits, labels);
    }
    return {loss_sum / static_cast<double>(data.size()),
            static_cast<double>(hits) / static_cast<double>(data.size())};
}

// Seeded mini-batch training: per batch zero-grads, forward, loss, backward,
// Adam step. Validation loss/accuracy are recorded per epoch; the best
// validation snapshot is retained and restored at the end.
inline TrainResult train(GenreClassifier& model, const ExampleSet& train_data,
                         const ExampleSet& val_data, const TrainOptions& opt) {
    if (opt.epochs < 1) throw ContractError("train: epochs must be >= 1");
    if (opt.batch_size < 1) throw ContractError("train: batch_size must be >= 1");
    if (train_data.size() == 0) throw ContractError("train: empty train split");

    Adam optimizer(model.trainable_parameters(), opt.adam);
    const auto all_params = model.named_parameters();

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snapshot;
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(mix_seed(opt.seed, fnv1a("train-shuffle")), epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t hits = 0;
        std::size_t batch_no = 0;
        for (std::size_t begin = 0; begin < train_data.size(); begin += opt.batch_size) {
            const std::size_t end = std::min(begin + opt.batch_size, train_data.size());
            const auto idx = detail::batch_indices(begin, end, order);
            const auto labels = detail::gather_labels(train_data, idx);

            optimizer.zero_grad();
            Tape tape;
            std::vector<EncodedText> text;
            Tensor images;
            if (model.uses_text()) text = detail::gather_text(train_data, idx);
            if (model.uses_image()) images = stack_images(train_data.images, idx);
            try {
                Tensor logits = model.forward_logits(tape, model.uses_text() ? &text : nullptr,
                                                     model.uses_image() ? &images : nullptr);
                Tensor loss = tape.sparse_cross_entropy(logits, labels);
                tape.backward(loss);
                optimizer.step();
                loss_sum += loss.at(0) * static_cast<double>(idx.size());
                hits += detail::count_top1_hits(logits, labels);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " +
                                   std::to_string(batch_no + 1) + ": " + e.what());
            }
            ++batch_no;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train_data.size());
        stats.train_accuracy =
            static_cast<double>(hits) / static_cast<double>(train_data.size());

        if (val_data.size() > 0) {
            const auto [vl, va] = evaluate_loss_accuracy(model, val_data, opt.batch_size);
            stats.val_loss = vl;
            stats.val_accuracy = va;
            if (vl < best_val) {
                best_val = vl;
                result.best_epoch = epoch;
                since_best = 0;
                best_snapshot.clear();
                for (const auto& [name, p] : all_params) best_snapshot.push_back(p.values());
            } else {
                ++since_best;
            }
        } else {
            result.best_epoch = epoch;
        }
        result.history.push_back(stats);

        if (val_data.size() > 0 && opt.patience > 0 && since_best >= opt.patience) break;
    }

    if (!best_snapshot.empty()) {
        for (std::size_t i = 0; i < all_params.size(); ++i) {
            all_params[i].second.values() = best_snapshot[i];
        }
    }
    return result;
}

}  // namespace genrefusion
