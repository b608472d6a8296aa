#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "genrefusion/models.hpp"
#include "genrefusion/rng.hpp"
#include "genrefusion/tensor.hpp"

using namespace genrefusion;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Independent scalar unroll of the LSTM recurrence, same fused gate layout
// (i, f, g, o) as the encoder stores.
std::vector<double> lstm_oracle(const Tensor& embedding, const Tensor& wx, const Tensor& wh,
                                const Tensor& bias, const std::vector<int>& ids) {
    const std::size_t e = embedding.dim(1);
    const std::size_t h = wh.dim(0);
    std::vector<double> hid(h, 0.0), cell(h, 0.0);
    for (int id : ids) {
        std::vector<double> z(4 * h, 0.0);
        for (std::size_t j = 0; j < 4 * h; ++j) {
            double acc = bias.at(0, j);
            for (std::size_t k = 0; k < e; ++k) {
                acc += embedding.at(static_cast<std::size_t>(id), k) * wx.at(k, j);
            }
            for (std::size_t k = 0; k < h; ++k) acc += hid[k] * wh.at(k, j);
            z[j] = acc;
        }
        for (std::size_t u = 0; u < h; ++u) {
            const double gi = sigm(z[u]);
            const double gf = sigm(z[h + u]);
            const double gg = std::tanh(z[2 * h + u]);
            const double go = sigm(z[3 * h + u]);
            cell[u] = gf * cell[u] + gi * gg;
            hid[u] = go * std::tanh(cell[u]);
        }
    }
    return hid;
}

EncodedText make_encoded(std::vector<int> ids, std::size_t max_len) {
    EncodedText enc;
    enc.true_length = ids.size();
    ids.resize(max_len, Vocabulary::kPad);
    enc.ids = std::move(ids);
    return enc;
}

ClassifierConfig tiny_fused_config() {
    ClassifierConfig cfg;
    cfg.modality = Modality::fused;
    cfg.text.vocab_size = 12;
    cfg.text.embed_dim = 4;
    cfg.text.hidden = 4;
    cfg.image.image_size = 8;
    cfg.image.conv_channels = {4};
    cfg.image.feature_dim = 8;
    cfg.num_classes = 5;
    return cfg;
}

Tensor random_images(std::size_t batch, std::size_t size, Rng& rng) {
    Tensor t = Tensor::zeros({batch, 3, size, size});
    for (double& v : t.values()) v = rng.uniform(0.0, 1.0);
    return t;
}

}  // namespace

TEST(LstmTest, ZeroWeightsGiveZeroOutput) {
    TextEncoderConfig cfg;
    cfg.vocab_size = 6;
    cfg.embed_dim = 3;
    cfg.hidden = 4;
    TextEncoder encoder(cfg);  // weights stay zero without init()
    Tape tape;
    std::vector<EncodedText> batch = {make_encoded({1, 2, 3}, 5), make_encoded({4}, 5)};
    Tensor h = encoder.forward(tape, batch);
    ASSERT_EQ(h.shape(), (Shape{2, 4}));
    for (double v : h.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LstmTest, OutputShapeMatchesPaperHiddenSize) {
    TextEncoderConfig cfg;
    cfg.vocab_size = 10;
    cfg.embed_dim = 8;
    cfg.hidden = 256;
    TextEncoder encoder(cfg);
    Rng rng(2);
    encoder.init(rng);
    Tape tape;
    std::vector<EncodedText> batch = {make_encoded({1, 2}, 4), make_encoded({3}, 4),
                                      make_encoded({5, 6, 7, 8}, 4)};
    Tensor h = encoder.forward(tape, batch);
    EXPECT_EQ(h.shape(), (Shape{3, 256}));
}

TEST(LstmTest, MatchesHandUnrolledRecurrence) {
    TextEncoderConfig cfg;
    cfg.vocab_size = 4;
    cfg.embed_dim = 2;
    cfg.hidden = 2;
    TextEncoder encoder(cfg);
    Rng rng(7);
    encoder.init(rng);

    Tensor embedding, wx, wh, bias;
    for (auto& [name, p] : encoder.named_parameters("text")) {
        if (name == "text.embedding") embedding = p;
        if (name == "text.w_x") wx = p;
        if (name == "text.w_h") wh = p;
        if (name == "text.bias") bias = p;
    }

    const std::vector<int> ids = {2, 0, 3};
    const auto expected = lstm_oracle(embedding, wx, wh, bias, ids);

    Tape tape;
    std::vector<EncodedText> batch = {make_encoded(ids, 3)};
    Tensor h = encoder.forward(tape, batch);
    ASSERT_EQ(h.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR(h.values()[i], expected[i], 1e-12);
    }
}

TEST(LstmTest, PaddingBeyondTrueLengthIsBitwiseInvariant) {
    TextEncoderConfig cfg;
    cfg.vocab_size = 9;
    cfg.embed_dim = 3;
    cfg.hidden = 5;
    TextEncoder encoder(cfg);
    Rng rng(11);
    encoder.init(rng);

    std::vector<EncodedText> short_batch = {make_encoded({1, 2, 3}, 4),
                                            make_encoded({4, 5}, 4)};
    std::vector<EncodedText> long_batch = {make_encoded({1, 2, 3}, 12),
                                           make_encoded({4, 5}, 12)};
    Tape t1, t2;
    Tensor h1 = encoder.forward(t1, short_batch);
    Tensor h2 = encoder.forward(t2, long_batch);
    EXPECT_EQ(h1.values(), h2.values());
}

TEST(LstmTest, EmptySequencesReturnZeros) {
    TextEncoderConfig cfg;
    cfg.vocab_size = 5;
    cfg.embed_dim = 2;
    cfg.hidden = 3;
    TextEncoder encoder(cfg);
    Rng rng(13);
    encoder.init(rng);
    Tape tape;
    std::vector<EncodedText> batch = {make_encoded({}, 4), make_encoded({2, 3}, 4)};
    Tensor h = encoder.forward(tape, batch);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(h.at(0, j), 0.0);
    double row1 = 0.0;
    for (std::size_t j = 0; j < 3; ++j) row1 += std::abs(h.at(1, j));
    EXPECT_GT(row1, 0.0);
}

TEST(CnnTest, FeatureWidthIndependentOfImageSize) {
    for (std::size_t size : {8u, 16u}) {
        ImageEncoderConfig cfg;
        cfg.image_size = size;
        cfg.conv_channels = {4};
        cfg.feature_dim = 1024;
        ImageEncoder encoder(cfg);
        Rng rng(17);
        encoder.init(rng);
        Tape tape;
        Tensor images = random_images(2, size, rng);
        Tensor f = encoder.forward(tape, images);
        EXPECT_EQ(f.shape(), (Shape{2, 1024}));
    }
}

TEST(CnnTest, ZeroImageZeroBiasGivesZeroFeatures) {
    ImageEncoderConfig cfg;
    cfg.image_size = 8;
    cfg.conv_channels = {4, 6};
    cfg.feature_dim = 10;
    ImageEncoder encoder(cfg);
    Rng rng(19);
    encoder.init(rng);  // biases stay zero
    Tape tape;
    Tensor images = Tensor::zeros({2, 3, 8, 8});
    Tensor f = encoder.forward(tape, images);
    for (double v : f.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(CnnTest, FeaturesAreNonNegativeAndPure) {
    ImageEncoderConfig cfg;
    cfg.image_size = 8;
    cfg.conv_channels = {4};
    cfg.feature_dim = 12;
    ImageEncoder encoder(cfg);
    Rng rng(23);
    encoder.init(rng);
    Tape tape;
    Tensor one = random_images(1, 8, rng);
    Tensor two = Tensor::zeros({2, 3, 8, 8});
    std::copy(one.values().begin(), one.values().end(), two.data());
    std::copy(one.values().begin(), one.values().end(), two.data() + one.size());
    Tensor f = encoder.forward(tape, two);
    for (double v : f.values()) EXPECT_GE(v, 0.0);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_DOUBLE_EQ(f.at(0, j), f.at(1, j));
}

TEST(CnnTest, WrongImageSizeIsShapeError) {
    ImageEncoderConfig cfg;
    cfg.image_size = 8;
    cfg.conv_channels = {4};
    cfg.feature_dim = 8;
    ImageEncoder encoder(cfg);
    Tape tape;
    EXPECT_THROW(encoder.forward(tape, Tensor::zeros({1, 3, 16, 16})), DimensionError);
}

TEST(FusionTest, PaperWidthsAndProbabilityRows) {
    ClassifierConfig cfg;
    cfg.modality = Modality::fused;
    cfg.text.vocab_size = 30;
    cfg.text.embed_dim = 8;
    cfg.text.hidden = 256;
    cfg.image.image_size = 16;
    cfg.image.conv_channels = {4};
    cfg.image.feature_dim = 1024;
    cfg.num_classes = 15;
    GenreClassifier model(cfg);
    model.init(31);

    bool saw_head = false;
    for (const auto& [name, p] : model.named_parameters()) {
        if (name == "head.w") {
            EXPECT_EQ(p.shape(), (Shape{1280, 15}));  // 256 + 1024 fusion width
            saw_head = true;
        }
    }
    EXPECT_TRUE(saw_head);

    Rng rng(37);
    Tape tape;
    std::vector<EncodedText> text = {make_encoded({1, 2, 3}, 6), make_encoded({4, 5}, 6)};
    Tensor images = random_images(2, 16, rng);
    Tensor probs = model.forward_probs(tape, &text, &images);
    ASSERT_EQ(probs.shape(), (Shape{2, 15}));
    for (std::size_t i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 15; ++j) sum += probs.at(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(FusionTest, ZeroHeadGivesUniformRows) {
    ClassifierConfig cfg = tiny_fused_config();
    cfg.num_classes = 15;
    GenreClassifier model(cfg);  // every weight still zero
    Rng rng(41);
    Tape tape;
    std::vector<EncodedText> text = {make_encoded({1}, 4)};
    Tensor images = random_images(1, 8, rng);
    Tensor probs = model.forward_probs(tape, &text, &images);
    for (std::size_t j = 0; j < 15; ++j) EXPECT_NEAR(probs.at(0, j), 1.0 / 15.0, 1e-12);
}

TEST(FusionTest, BatchSizeMismatchIsContractError) {
    GenreClassifier model(tiny_fused_config());
    Rng rng(43);
    Tape tape;
    std::vector<EncodedText> text = {make_encoded({1}, 4), make_encoded({2}, 4)};
    Tensor images = random_images(3, 8, rng);
    EXPECT_THROW(model.forward_logits(tape, &text, &images), ContractError);
}

TEST(FusionTest, MissingModalityInputIsContractError) {
    GenreClassifier model(tiny_fused_config());
    Tape tape;
    std::vector<EncodedText> text = {make_encoded({1}, 4)};
    EXPECT_THROW(model.forward_logits(tape, &text, nullptr), ContractError);
    EXPECT_THROW(model.forward_logits(tape, nullptr, nullptr), ContractError);
}

TEST(FusionTest, FrozenEncodersGetExactlyZeroGradient) {
    ClassifierConfig cfg = tiny_fused_config();
    cfg.freeze_encoders = true;
    GenreClassifier model(cfg);
    model.init(47);

    Rng rng(53);
    Tape tape;
    std::vector<EncodedText> text = {make_encoded({1, 2}, 4), make_encoded({3}, 4)};
    Tensor images = random_images(2, 8, rng);
    Tensor logits = model.forward_logits(tape, &text, &images);
    Tensor loss = tape.sparse_cross_entropy(logits, {0, 3});
    tape.backward(loss);

    for (const auto& [name, p] : model.encoder_parameters()) {
        EXPECT_FALSE(p.requires_grad()) << name;
        EXPECT_DOUBLE_EQ(p.max_abs_grad(), 0.0) << name;
    }
    double head_grad = 0.0;
    for (const auto& [name, p] : model.trainable_parameters()) {
        head_grad = std::max(head_grad, p.max_abs_grad());
    }
    EXPECT_GT(head_grad, 0.0);
}

TEST(FusionTest, SingleModalityConfigsExposeOnlyTheirEncoder) {
    ClassifierConfig cfg = tiny_fused_config();
    cfg.modality = Modality::text;
    GenreClassifier text_model(cfg);
    for (const auto& [name, p] : text_model.named_parameters()) {
        EXPECT_EQ(name.rfind("image", 0), std::string::npos) << name;
    }
    cfg.modality = Modality::image;
    GenreClassifier image_model(cfg);
    for (const auto& [name, p] : image_model.named_parameters()) {
        EXPECT_EQ(name.rfind("text", 0), std::string::npos) << name;
    }
}

TEST(FusionTest, BatchPermutationPermutesOutputs) {
    ClassifierConfig cfg = tiny_fused_config();
    GenreClassifier model(cfg);
    model.init(59);
    Rng rng(61);
    std::vector<EncodedText> text = {make_encoded({1, 2}, 4), make_encoded({3, 4, 5}, 4),
                                     make_encoded({6}, 4)};
    Tensor images = random_images(3, 8, rng);

    Tape t1;
    Tensor p1 = model.forward_probs(t1, &text, &images);

    // reversed batch
    std::vector<EncodedText> rtext = {text[2], text[1], text[0]};
    Tensor rimages = Tensor::zeros(images.shape());
    const std::size_t stride = 3 * 8 * 8;
    for (std::size_t i = 0; i < 3; ++i) {
        std::copy(images.data() + (2 - i) * stride, images.data() + (3 - i) * stride,
                  rimages.data() + i * stride);
    }
    Tape t2;
    Tensor p2 = model.forward_probs(t2, &rtext, &rimages);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_DOUBLE_EQ(p1.at(i, j), p2.at(2 - i, j));
        }
    }
}

TEST(FusionTest, EndToEndGradientCheck) {
    GenreClassifier model(tiny_fused_config());
    model.init(67);
    Rng rng(71);
    std::vector<EncodedText> text = {make_encoded({1, 4, 7}, 5), make_encoded({2, 9}, 5)};
    Tensor images = random_images(2, 8, rng);
    const std::vector<int> labels = {2, 4};
    auto f = [&](Tape& t) {
        return t.sparse_cross_entropy(model.forward_logits(t, &text, &images), labels);
    };
    for (auto& [name, p] : model.named_parameters()) {
        EXPECT_LT(gradient_check(f, p, 1e-5), 1e-4) << name;
    }
}

TEST(PredictTopkTest, Argmax) {
    Tensor probs = Tensor::matrix({{0.1, 0.7, 0.2}});
    const auto top = predict_topk(probs, 1);
    EXPECT_EQ(top[0], (std::vector<int>{1}));
}

TEST(PredictTopkTest, FullKIsPermutation) {
    Tensor probs = Tensor::matrix({{0.2, 0.5, 0.1, 0.2}});
    const auto top = predict_topk(probs, 4);
    std::set<int> seen(top[0].begin(), top[0].end());
    EXPECT_EQ(seen.size(), 4u);
}

TEST(PredictTopkTest, TieBreaksTowardLowerIndex) {
    Tensor probs = Tensor::matrix({{0.4, 0.4, 0.2}});
    const auto top = predict_topk(probs, 2);
    EXPECT_EQ(top[0], (std::vector<int>{0, 1}));
}

TEST(PredictTopkTest, KOutOfRangeIsContractError) {
    Tensor probs = Tensor::matrix({{0.5, 0.5}});
    EXPECT_THROW(predict_topk(probs, 3), ContractError);
    EXPECT_THROW(predict_topk(probs, 0), ContractError);
}

TEST(PredictTopkTest, TopKSetsAreNested) {
    Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor probs = Tensor::zeros({3, 8});
        for (double& v : probs.values()) v = rng.uniform(0.0, 1.0);
        for (std::size_t k = 1; k < 8; ++k) {
            const auto smaller = predict_topk(probs, k);
            const auto larger = predict_topk(probs, k + 1);
            for (std::size_t row = 0; row < 3; ++row) {
                std::set<int> big(larger[row].begin(), larger[row].end());
                for (int c : smaller[row]) EXPECT_TRUE(big.count(c));
                // non-increasing probability order
                for (std::size_t j = 1; j < smaller[row].size(); ++j) {
                    EXPECT_GE(probs.at(row, static_cast<std::size_t>(smaller[row][j - 1])),
                              probs.at(row, static_cast<std::size_t>(smaller[row][j])));
                }
            }
        }
    }
}
