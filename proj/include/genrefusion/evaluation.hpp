#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "genrefusion/errors.hpp"
#include "genrefusion/genres.hpp"
#include "genrefusion/models.hpp"
#include "genrefusion/tensor.hpp"

namespace genrefusion {

inline void require_labels(const Tensor& probs, const std::vector<int>& labels,
                           std::size_t num_classes) {
    if (probs.rank() != 2 || probs.dim(1) != num_classes) {
        throw DimensionError("evaluation: expected [Nx" + std::to_string(num_classes) +
                             "] probabilities, got " + shape_str(probs.shape()));
    }
    if (labels.size() != probs.dim(0)) {
        throw ContractError("evaluation: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(probs.dim(0)) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw LabelError("evaluation: label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(num_classes) + ")");
        }
    }
}

// Fraction of rows whose label appears among the k top-ranked classes.
inline double top_k_accuracy(const Tensor& probs, const std::vector<int>& labels,
                             std::size_t k) {
    if (probs.rank() != 2) {
        throw DimensionError("top_k_accuracy: expected [NxK], got " + shape_str(probs.shape()));
    }
    require_labels(probs, labels, probs.dim(1));
    if (labels.empty()) throw ContractError("top_k_accuracy: empty evaluation set");
    const auto topk = predict_topk(probs, k);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int c : topk[i]) {
            if (c == labels[i]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Entry (i, j) counts records observed as genre i and top-1-predicted as j.
inline std::vector<std::vector<std::int64_t>> confusion_matrix(const Tensor& probs,
                                                               const std::vector<int>& labels,
                                                               std::size_t num_classes) {
    require_labels(probs, labels, num_classes);
    std::vector<std::vector<std::int64_t>> m(num_classes,
                                             std::vector<std::int64_t>(num_classes, 0));
    const auto top1 = predict_topk(probs, 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(top1[i][0])] += 1;
    }
    return m;
}

// Per-genre top-1 accuracy; genres with zero support are reported as
// nullopt, distinct from an accuracy of 0.
inline std::vector<std::optional<double>> per_genre_accuracy(const Tensor& probs,
                                                             const std::vector<int>& labels,
                                                             std::size_t num_classes) {
    require_labels(probs, labels, num_classes);
    std::vector<std::int64_t> support(num_classes, 0), correct(num_classes, 0);
    const auto top1 = predict_topk(probs, 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto g = static_cast<std::size_t>(labels[i]);
        ++support[g];
        if (top1[i][0] == labels[i]) ++correct[g];
    }
    std::vector<std::optional<double>> acc(num_classes);
    for (std::size_t g = 0; g < num_classes; ++g) {
        if (support[g] > 0) {
            acc[g] = static_cast<double>(correct[g]) / static_cast<double>(support[g]);
        }
    }
    return acc;
}

struct EvaluationReport {
    std::map<std::size_t, double> top_k;  // k -> accuracy, reported for k in {1, 3}
    std::vector<std::optional<double>> per_genre;
    std::vector<std::int64_t> support;
    std::vector<std::vector<std::int64_t>> confusion;
    std::size_t total = 0;

    static EvaluationReport compute(const Tensor& probs, const std::vector<int>& labels,
                                    std::size_t num_classes) {
        EvaluationReport r;
        r.total = labels.size();
        r.top_k[1] = top_k_accuracy(probs, labels, 1);
        if (num_classes >= 3) r.top_k[3] = top_k_accuracy(probs, labels, 3);
        r.per_genre = per_genre_accuracy(probs, labels, num_classes);
        r.confusion = confusion_matrix(probs, labels, num_classes);
        r.support.assign(num_classes, 0);
        for (int y : labels) ++r.support[static_cast<std::size_t>(y)];
        return r;
    }

    nlohmann::json to_json(const std::vector<std::string>& genre_names) const {
        nlohmann::json j;
        j["total"] = total;
        for (const auto& [k, acc] : top_k) j["top_k"][std::to_string(k)] = acc;
        j["per_genre"] = nlohmann::json::array();
        for (std::size_t g = 0; g < per_genre.size(); ++g) {
            nlohmann::json row;
            row["genre"] = genre_names[g];
            row["support"] = support[g];
            row["correct"] = confusion[g][g];
            if (per_genre[g]) {
                row["accuracy"] = *per_genre[g];
            } else {
                row["accuracy"] = nullptr;
            }
            j["per_genre"].push_back(row);
        }
        j["confusion"] = confusion;
        return j;
    }

    // Human-readable summary shaped like an accuracy table plus a per-genre
    // breakdown.
    void write_text(std::ostream& out, const std::vector<std::string>& genre_names) const {
        out << "records evaluated: " << total << "\n";
        out << std::fixed << std::setprecision(1);
        for (const auto& [k, acc] : top_k) {
            out << "top-" << k << " accuracy: " << acc * 100.0 << "%\n";
        }
        out << "\n";
        out << std::left << std::setw(14) << "Genre" << std::right << std::setw(9) << "Support"
            << std::setw(9) << "Top 1(%)" << "\n";
        for (std::size_t g = 0; g < per_genre.size(); ++g) {
            out << std::left << std::setw(14) << genre_names[g] << std::right << std::setw(9)
                << support[g] << std::setw(9);
            if (per_genre[g]) {
                out << *per_genre[g] * 100.0;
            } else {
                out << "-";
            }
            out << "\n";
        }
        out.unsetf(std::ios::floatfield);
    }

    // Rows = observed genre, columns = predicted genre, both in canonical
    // order, with genre-name headers.
    void write_confusion_csv(std::ostream& out,
                             const std::vector<std::string>& genre_names) const {
        out << "observed\\predicted";
        for (const auto& name : genre_names) out << "," << name;
        out << "\n";
        for (std::size_t g = 0; g < confusion.size(); ++g) {
            out << genre_names[g];
            for (std::int64_t n : confusion[g]) out << "," << n;
            out << "\n";
        }
    }
};

}  // namespace genrefusion
