#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "genrefusion/errors.hpp"
#include "genrefusion/rng.hpp"
#include "genrefusion/tensor.hpp"
#include "genrefusion/text.hpp"

namespace genrefusion {

enum class Modality { text, image, fused };

inline std::string modality_name(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::image: return "image";
        case Modality::fused: return "fused";
    }
    return "fused";
}

inline Modality modality_from_string(const std::string& s) {
    if (s == "text") return Modality::text;
    if (s == "image") return Modality::image;
    if (s == "fused") return Modality::fused;
    throw ConfigError("unknown modality: '" + s + "' (expected text|image|fused)");
}

namespace detail {

// Uniform(-limit, +limit) with limit = sqrt(6 / (fan_in + fan_out)).
inline void glorot_init(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TextEncoder: embedding + single vanilla LSTM cell, returning the hidden
// state at position true_length-1 of each sequence. Gate weights are stored
// fused as [in x 4H] with column blocks (i, f, g, o).
// ---------------------------------------------------------------------------
struct TextEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 128;
    std::size_t hidden = 256;
};

class TextEncoder {
public:
    TextEncoder() = default;

    explicit TextEncoder(const TextEncoderConfig& cfg) : cfg_(cfg) {
        if (cfg.vocab_size < 2) throw ContractError("text encoder: vocab size must be >= 2");
        embedding_ = Tensor::zeros({cfg.vocab_size, cfg.embed_dim}, true);
        w_x_ = Tensor::zeros({cfg.embed_dim, 4 * cfg.hidden}, true);
        w_h_ = Tensor::zeros({cfg.hidden, 4 * cfg.hidden}, true);
        bias_ = Tensor::zeros({1, 4 * cfg.hidden}, true);
    }

    void init(Rng& rng) {
        detail::glorot_init(embedding_, cfg_.vocab_size, cfg_.embed_dim, rng);
        detail::glorot_init(w_x_, cfg_.embed_dim, 4 * cfg_.hidden, rng);
        detail::glorot_init(w_h_, cfg_.hidden, 4 * cfg_.hidden, rng);
        // forget-gate bias starts at 1 so early training does not wipe state
        for (std::size_t j = cfg_.hidden; j < 2 * cfg_.hidden; ++j) bias_.values()[j] = 1.0;
    }

    // batch -> [B x hidden]. PAD positions never change the carried state, so
    // the result is the hidden state after each row's last real token; rows
    // with true_length == 0 come back as zeros.
    Tensor forward(Tape& tape, const std::vector<EncodedText>& batch) const {
        if (batch.empty()) throw ContractError("lstm_forward: empty batch");
        const std::size_t b = batch.size(), h = cfg_.hidden;
        std::size_t steps = 0;
        for (const auto& enc : batch) steps = std::max(steps, enc.true_length);

        Tensor hidden = Tensor::zeros({b, h});
        Tensor cell = Tensor::zeros({b, h});
        std::vector<int> ids(b);
        std::vector<char> mask(b);
        for (std::size_t t = 0; t < steps; ++t) {
            bool all_live = true;
            for (std::size_t i = 0; i < b; ++i) {
                ids[i] = t < batch[i].ids.size() ? batch[i].ids[t] : Vocabulary::kPad;
                mask[i] = t < batch[i].true_length ? 1 : 0;
                all_live = all_live && mask[i];
            }
            Tensor x = tape.embedding(embedding_, ids);
            Tensor z = tape.add_bias(
                tape.add(tape.matmul(x, w_x_), tape.matmul(hidden, w_h_)), bias_);
            Tensor gi = tape.sigmoid(tape.slice_cols(z, 0, h));
            Tensor gf = tape.sigmoid(tape.slice_cols(z, h, 2 * h));
            Tensor gg = tape.tanh(tape.slice_cols(z, 2 * h, 3 * h));
            Tensor go = tape.sigmoid(tape.slice_cols(z, 3 * h, 4 * h));
            Tensor cell_new = tape.add(tape.mul(gf, cell), tape.mul(gi, gg));
            Tensor hidden_new = tape.mul(go, tape.tanh(cell_new));
            if (all_live) {
                cell = cell_new;
                hidden = hidden_new;
            } else {
                cell = tape.select_rows(mask, cell_new, cell);
                hidden = tape.select_rows(mask, hidden_new, hidden);
            }
        }
        return hidden;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
        return {{prefix + ".embedding", embedding_},
                {prefix + ".w_x", w_x_},
                {prefix + ".w_h", w_h_},
                {prefix + ".bias", bias_}};
    }

    const TextEncoderConfig& config() const { return cfg_; }
    std::size_t feature_dim() const { return cfg_.hidden; }

private:
    TextEncoderConfig cfg_;
    Tensor embedding_, w_x_, w_h_, bias_;
};

// ---------------------------------------------------------------------------
// ImageEncoder: conv(3x3, pad 1) + ReLU + 2x2 max-pool blocks, flatten, then
// a dense ReLU layer to feature_dim units. Features are elementwise >= 0.
// ---------------------------------------------------------------------------
struct ImageEncoderConfig {
    std::size_t image_size = 64;
    std::vector<std::size_t> conv_channels = {8, 16, 32};
    std::size_t feature_dim = 1024;
};

class ImageEncoder {
public:
    ImageEncoder() = default;

    explicit ImageEncoder(const ImageEncoderConfig& cfg) : cfg_(cfg) {
        if (cfg.conv_channels.empty()) {
            throw ContractError("image encoder: need at least one conv block");
        }
        std::size_t side = cfg.image_size;
        std::size_t in_ch = 3;
        for (std::size_t c : cfg.conv_channels) {
            kernels_.push_back(Tensor::zeros({c, in_ch, 3, 3}, true));
            conv_bias_.push_back(Tensor::zeros({c}, true));
            in_ch = c;
            side /= 2;
            if (side == 0) {
                throw ConfigError("image encoder: image size " +
                                  std::to_string(cfg.image_size) + " too small for " +
                                  std::to_string(cfg.conv_channels.size()) + " pooling blocks");
            }
        }
        flat_dim_ = in_ch * side * side;
        dense_w_ = Tensor::zeros({flat_dim_, cfg.feature_dim}, true);
        dense_b_ = Tensor::zeros({1, cfg.feature_dim}, true);
    }

    void init(Rng& rng) {
        std::size_t in_ch = 3;
        for (std::size_t i = 0; i < kernels_.size(); ++i) {
            const std::size_t out_ch = cfg_.conv_channels[i];
            detail::glorot_init(kernels_[i], in_ch * 9, out_ch * 9, rng);
            in_ch = out_ch;
        }
        detail::glorot_init(dense_w_, flat_dim_, cfg_.feature_dim, rng);
    }

    // images [B x 3 x S x S] -> [B x feature_dim]
    Tensor forward(Tape& tape, const Tensor& images) const {
        if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.image_size ||
            images.dim(3) != cfg_.image_size) {
            throw DimensionError("image encoder: expected [Bx3x" +
                                 std::to_string(cfg_.image_size) + "x" +
                                 std::to_string(cfg_.image_size) + "], got " +
                                 shape_str(images.shape()));
        }
        Tensor x = images;
        for (std::size_t i = 0; i < kernels_.size(); ++i) {
            x = tape.relu(tape.add_channel_bias(tape.conv2d(x, kernels_[i], 1, 1), conv_bias_[i]));
            x = tape.max_pool2(x);
        }
        Tensor flat = tape.reshape(x, {images.dim(0), flat_dim_});
        return tape.relu(tape.add_bias(tape.matmul(flat, dense_w_), dense_b_));
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> params;
        for (std::size_t i = 0; i < kernels_.size(); ++i) {
            params.emplace_back(prefix + ".conv" + std::to_string(i) + ".kernels", kernels_[i]);
            params.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", conv_bias_[i]);
        }
        params.emplace_back(prefix + ".dense.w", dense_w_);
        params.emplace_back(prefix + ".dense.b", dense_b_);
        return params;
    }

    const ImageEncoderConfig& config() const { return cfg_; }
    std::size_t feature_dim() const { return cfg_.feature_dim; }

private:
    ImageEncoderConfig cfg_;
    std::vector<Tensor> kernels_, conv_bias_;
    std::size_t flat_dim_ = 0;
    Tensor dense_w_, dense_b_;
};

// ---------------------------------------------------------------------------
// Late-fusion classifier: per-modality encoders, feature concatenation (text
// columns first), and a dense softmax head. Single-modality baselines are the
// same model with one encoder configured away.
// ---------------------------------------------------------------------------
struct ClassifierConfig {
    Modality modality = Modality::fused;
    TextEncoderConfig text;
    ImageEncoderConfig image;
    std::size_t num_classes = 15;
    bool freeze_encoders = false;
};

class GenreClassifier {
public:
    GenreClassifier() = default;

    explicit GenreClassifier(const ClassifierConfig& cfg) : cfg_(cfg) {
        std::size_t fusion_dim = 0;
        if (uses_text()) {
            text_.emplace(cfg.text);
            fusion_dim += text_->feature_dim();
        }
        if (uses_image()) {
            image_.emplace(cfg.image);
            fusion_dim += image_->feature_dim();
        }
        head_w_ = Tensor::zeros({fusion_dim, cfg.num_classes}, true);
        head_b_ = Tensor::zeros({1, cfg.num_classes}, true);
        apply_freeze();
    }

    void init(std::uint64_t seed) {
        Rng rng(mix_seed(seed, fnv1a("model-init")));
        if (text_) text_->init(rng);
        if (image_) image_->init(rng);
        detail::glorot_init(head_w_, head_w_.dim(0), head_w_.dim(1), rng);
    }

    bool uses_text() const { return cfg_.modality != Modality::image; }
    bool uses_image() const { return cfg_.modality != Modality::text; }

    // Raw scores [B x K]; feed these to the loss.
    Tensor forward_logits(Tape& tape, const std::vector<EncodedText>* text_batch,
                          const Tensor* image_batch) const {
        std::optional<Tensor> features;
        std::size_t text_rows = 0, image_rows = 0;
        if (uses_text()) {
            if (!text_batch) throw ContractError("forward: text batch required");
            text_rows = text_batch->size();
            features = text_->forward(tape, *text_batch);
        }
        if (uses_image()) {
            if (!image_batch) throw ContractError("forward: image batch required");
            image_rows = image_batch->dim(0);
            Tensor img_features = image_->forward(tape, *image_batch);
            if (features) {
                if (text_rows != image_rows) {
                    throw ContractError("forward: batch sizes differ: " +
                                        std::to_string(text_rows) + " texts vs " +
                                        std::to_string(image_rows) + " images");
                }
                features = tape.concat_rows(*features, img_features);
            } else {
                features = img_features;
            }
        }
        return tape.add_bias(tape.matmul(*features, head_w_), head_b_);
    }

    // Probability rows summing to 1.
    Tensor forward_probs(Tape& tape, const std::vector<EncodedText>* text_batch,
                         const Tensor* image_batch) const {
        return tape.softmax(forward_logits(tape, text_batch, image_batch));
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> params;
        if (text_) {
            for (auto& p : text_->named_parameters("text")) params.push_back(std::move(p));
        }
        if (image_) {
            for (auto& p : image_->named_parameters("image")) params.push_back(std::move(p));
        }
        params.emplace_back("head.w", head_w_);
        params.emplace_back("head.b", head_b_);
        return params;
    }

    // Parameters the optimizer may update; excludes encoders when frozen.
    std::vector<std::pair<std::string, Tensor>> trainable_parameters() const {
        if (!cfg_.freeze_encoders) return named_parameters();
        return {{"head.w", head_w_}, {"head.b", head_b_}};
    }

    std::vector<std::pair<std::string, Tensor>> encoder_parameters() const {
        std::vector<std::pair<std::string, Tensor>> params;
        if (text_) {
            for (auto& p : text_->named_parameters("text")) params.push_back(std::move(p));
        }
        if (image_) {
            for (auto& p : image_->named_parameters("image")) params.push_back(std::move(p));
        }
        return params;
    }

    const ClassifierConfig& config() const { return cfg_; }
    const TextEncoder& text_encoder() const { return *text_; }
    const ImageEncoder& image_encoder() const { return *image_; }

private:
    // Frozen encoders do not require gradients, so no graph is recorded below
    // the concatenation layer and backward cannot touch them.
    void apply_freeze() {
        for (auto& [name, p] : encoder_parameters()) {
            p.set_requires_grad(!cfg_.freeze_encoders);
        }
    }

    ClassifierConfig cfg_;
    std::optional<TextEncoder> text_;
    std::optional<ImageEncoder> image_;
    Tensor head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Top-k prediction: per row, the k highest-probability class indices in
// non-increasing order, ties broken toward the lower index.
// ---------------------------------------------------------------------------
inline std::vector<std::vector<int>> predict_topk(const Tensor& probs, std::size_t k) {
    if (probs.rank() != 2) {
        throw DimensionError("predict_topk: expected [BxK], got " + shape_str(probs.shape()));
    }
    const std::size_t rows = probs.dim(0), classes = probs.dim(1);
    if (k == 0 || k > classes) {
        throw ContractError("predict_topk: k = " + std::to_string(k) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    std::vector<std::vector<int>> result(rows);
    std::vector<int> order(classes);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = probs.data() + i * classes;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [row](int a, int b) { return row[a] > row[b]; });
        result[i].assign(order.begin(), order.begin() + static_cast<long>(k));
    }
    return result;
}

}  // namespace genrefusion
