#include <cmath>

#include <gtest/gtest.h>

#include "genrefusion/optimizer.hpp"
#include "genrefusion/tensor.hpp"

using namespace genrefusion;

TEST(AdamTest, FirstStepMovesByLearningRate) {
    // bias correction makes m-hat = g and v-hat = g^2 at t = 1, so the step
    // is lr * g / (|g| + eps) ~= lr * sign(g)
    Tensor p = Tensor::from({3}, {0.0, 0.0, 0.0}, true);
    p.grad() = {0.5, -2.0, 1e-3};
    Adam adam({{"p", p}});
    adam.step();
    EXPECT_NEAR(p.at(0), -0.001, 1e-7);
    EXPECT_NEAR(p.at(1), 0.001, 1e-7);
    EXPECT_NEAR(p.at(2), -0.001, 1e-5);  // eps effects are visible for tiny g
    EXPECT_EQ(adam.step_count(), 1);
}

TEST(AdamTest, ZeroGradientIsFixedPoint) {
    Tensor p = Tensor::from({2}, {1.5, -0.5}, true);
    Adam adam({{"p", p}});
    for (int i = 0; i < 10; ++i) adam.step();
    EXPECT_DOUBLE_EQ(p.at(0), 1.5);
    EXPECT_DOUBLE_EQ(p.at(1), -0.5);
    EXPECT_EQ(adam.step_count(), 10);
}

TEST(AdamTest, ConvergesOnOneDimensionalQuadratic) {
    // f(theta) = theta^2, grad = 2*theta; the optimizer is its own oracle
    Tensor p = Tensor::from({1}, {1.0}, true);
    AdamOptions opts;
    opts.lr = 0.1;
    Adam adam({{"theta", p}}, opts);
    for (int i = 0; i < 200; ++i) {
        p.grad() = {2.0 * p.at(0)};
        adam.step();
    }
    EXPECT_LT(std::abs(p.at(0)), 0.05);
}

TEST(AdamTest, MissingGradIsContractErrorNamingParameter) {
    Tensor p = Tensor::from({2}, {1.0, 2.0});  // requires_grad false
    Adam adam({{"embedding", p}});
    try {
        adam.step();
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("embedding"), std::string::npos);
    }
}

TEST(AdamTest, StepInvariantUnderGradientRescaleAtLargeG) {
    Tensor p1 = Tensor::from({1}, {0.0}, true);
    Tensor p2 = Tensor::from({1}, {0.0}, true);
    Adam a1({{"p", p1}});
    Adam a2({{"p", p2}});
    p1.grad() = {1.0};
    p2.grad() = {2.0};
    a1.step();
    a2.step();
    EXPECT_NEAR(p1.at(0), p2.at(0), 1e-9);
}

TEST(AdamTest, Deterministic) {
    auto run = []() {
        Tensor p = Tensor::from({3}, {0.3, -0.7, 1.1}, true);
        Adam adam({{"p", p}});
        for (int i = 1; i <= 50; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                p.grad()[j] = std::sin(static_cast<double>(i) * (static_cast<double>(j) + 1.0));
            }
            adam.step();
        }
        return p.values();
    };
    EXPECT_EQ(run(), run());
}

TEST(AdamTest, ZeroGradClearsAccumulation) {
    Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
    Adam adam({{"p", p}});
    p.grad() = {1.0, 1.0};
    adam.zero_grad();
    EXPECT_EQ(p.grad(), (std::vector<double>{0.0, 0.0}));
}
