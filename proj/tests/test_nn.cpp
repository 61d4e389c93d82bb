#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/nn.hpp"
#include "support.hpp"

using namespace gga;
using gga::testing::linear_model;
using gga::testing::random_cnn;
using gga::testing::random_mlp;
using gga::testing::random_tensor;
using gga::testing::rel_error;

namespace {

Model dense_model(std::vector<double> w, std::vector<double> b) {
    const std::size_t out = b.size(), in = w.size() / out;
    Model m({in}, {LayerSpec::dense(in, out)}, out);
    m.params()[0][0] = Tensor({out, in}, std::move(w));
    m.params()[0][1] = Tensor({out}, std::move(b));
    return m;
}

double max_input_gradient_error(const Model& m, const Tensor& x, std::size_t cls, LossKind kind) {
    const Tensor g = input_gradient(m, x, cls, kind);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor p = x, q = x;
        p[i] += 1e-5;
        q[i] -= 1e-5;
        const double fd = (loss(forward(m, p).values(), cls, kind) - loss(forward(m, q).values(), cls, kind)) / 2e-5;
        worst = std::max(worst, rel_error(g[i], fd));
    }
    return worst;
}

double max_parameter_gradient_error(Model m, const Tensor& x, std::size_t cls, LossKind kind) {
    LayerParams grads = zero_like(m.params());
    parameter_gradient(m, x, cls, kind, grads);
    double worst = 0.0;
    for (std::size_t l = 0; l < m.params().size(); ++l)
        for (std::size_t t = 0; t < m.params()[l].size(); ++t) {
            if (m.layers()[l].kind == LayerKind::BatchNorm && t >= 2) continue;
            for (std::size_t i = 0; i < m.params()[l][t].size(); ++i) {
                double& p = m.params()[l][t][i];
                const double saved = p;
                p = saved + 1e-5;
                const double up = loss(forward(m, x).values(), cls, kind);
                p = saved - 1e-5;
                const double down = loss(forward(m, x).values(), cls, kind);
                p = saved;
                worst = std::max(worst, rel_error(grads[l][t][i], (up - down) / 2e-5));
            }
        }
    return worst;
}

}  // namespace

TEST(Forward, IdentityDenseLayer) {
    Model m = dense_model({1, 0, 0, 1}, {0, 0});
    EXPECT_EQ(forward(m, Tensor::vector({1, 2})).raw(), (std::vector<double>{1, 2}));
}

TEST(Forward, HandMatrixMultiply) {
    Model m = dense_model({1, 0, 0, -1}, {0.5, 0});
    EXPECT_EQ(forward(m, Tensor::vector({2, 3})).raw(), (std::vector<double>{2.5, -3}));
}

TEST(Forward, ZeroFinalLayerGivesZeroLogits) {
    std::mt19937_64 rng(1);
    Model m = random_mlp(rng, false);
    for (auto& t : m.params().back()) std::fill(t.values().begin(), t.values().end(), 0.0);
    const Tensor logits = forward(m, random_tensor(m.input_shape(), rng));
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatchNamesLayer) {
    try {
        Model bad({4}, {LayerSpec::dense(4, 3), LayerSpec::rectifier(), LayerSpec::dense(5, 2)}, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Data);
        EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
    }
    Model ok({4}, {LayerSpec::dense(4, 2)}, 2);
    EXPECT_THROW(forward(ok, Tensor::vector({1, 2, 3})), Error);
    EXPECT_THROW(Model({4}, {LayerSpec::dense(4, 3)}, 2), Error);
}

TEST(Forward, ConvolutionMatchesHandComputation) {
    // 1 channel 3x3 input, one 2x2 kernel, stride 1, no padding.
    Model m({1, 3, 3}, {LayerSpec::conv2d(1, 1, 2, 1, 0), LayerSpec::flatten(), LayerSpec::dense(4, 4)}, 4);
    m.params()[0][0] = Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    m.params()[0][1] = Tensor({1}, std::vector<double>{0.5});
    auto& w = m.params()[2][0];
    for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
    Tensor x({1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    // top-left window 1,2,4,5 -> 1+4+12+20 = 37
    EXPECT_EQ(forward(m, x).raw(), (std::vector<double>{37.5, 47.5, 67.5, 77.5}));
}

TEST(Forward, PaddingAndStride) {
    Model m({1, 2, 2}, {LayerSpec::conv2d(1, 1, 3, 2, 1), LayerSpec::flatten(), LayerSpec::dense(1, 1)}, 1);
    m.params()[0][0] = Tensor({1, 1, 3, 3}, 1.0);
    m.params()[2][0] = Tensor({1, 1}, 1.0);
    Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_EQ(m.shape_at(1), (Shape{1, 1, 1}));
    EXPECT_EQ(forward(m, x)[0], 10.0);
}

TEST(Loss, SoftmaxCrossEntropyOfEqualLogits) {
    EXPECT_NEAR(loss(std::vector<double>{0, 0}, 0, LossKind::Sce), std::numbers::ln2, 1e-15);
}

TEST(Loss, SaturatedLogitsStayFinite) {
    const double l = loss(std::vector<double>{1000, 0}, 0, LossKind::Sce);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 0.0, 1e-300);
    EXPECT_NEAR(loss(std::vector<double>{1000, 0}, 1, LossKind::Sce), 1000.0, 1e-9);
}

TEST(Loss, MeanSquaredError) {
    EXPECT_DOUBLE_EQ(loss(std::vector<double>{0, 0}, 0, LossKind::Mse), 0.25);
}

TEST(Loss, TargetOutOfRange) {
    EXPECT_THROW(loss(std::vector<double>{0, 0}, 2, LossKind::Sce), Error);
    EXPECT_THROW(loss_gradient(std::vector<double>{0, 0}, 5, LossKind::Mse), Error);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (LossKind kind : {LossKind::Sce, LossKind::Mse})
        for (int trial = 0; trial < 20; ++trial) {
            Tensor z = random_tensor({5}, rng, -3, 3);
            const Tensor g = loss_gradient(z.values(), 2, kind);
            for (std::size_t i = 0; i < 5; ++i) {
                Tensor p = z, q = z;
                p[i] += 1e-6;
                q[i] -= 1e-6;
                const double fd = (loss(p.values(), 2, kind) - loss(q.values(), 2, kind)) / 2e-6;
                EXPECT_NEAR(g[i], fd, 1e-7);
            }
        }
}

TEST(InputGradient, LinearModelClosedForm) {
    const std::vector<std::vector<double>> w{{1.0, -2.0, 0.5}, {0.3, 0.7, -1.1}, {-0.4, 0.2, 0.9}};
    Model m = linear_model(w);
    Tensor x = Tensor::vector({0.2, -0.5, 1.3});
    const Tensor logits = forward(m, x);
    const auto p = softmax(logits.values());
    for (std::size_t cls = 0; cls < 3; ++cls) {
        const Tensor g = input_gradient(m, x, cls);
        for (std::size_t j = 0; j < 3; ++j) {
            double expected = 0.0;
            for (std::size_t k = 0; k < 3; ++k) expected += (p[k] - (k == cls ? 1.0 : 0.0)) * w[k][j];
            EXPECT_NEAR(g[j], expected, 1e-14);
        }
    }
}

TEST(InputGradient, ConstantModelIsZero) {
    Model m({3}, {LayerSpec::dense(3, 4), LayerSpec::rectifier(), LayerSpec::dense(4, 2)}, 2);
    const Tensor g = input_gradient(m, Tensor::vector({1, 2, 3}), 1);
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(InputGradient, SharedForwardMatchesSingleCalls) {
    std::mt19937_64 rng(5);
    Model m = random_cnn(rng, false);
    Tensor x = random_tensor(m.input_shape(), rng, 0, 1);
    std::vector<std::size_t> classes{0, 1, 2, 3};
    Tensor logits;
    auto all = input_gradients(m, x, classes, LossKind::Sce, &logits);
    EXPECT_EQ(logits, forward(m, x));
    for (std::size_t c : classes) EXPECT_EQ(all[c], input_gradient(m, x, c));
}

TEST(InputGradient, FiniteDifferenceCheckOnDenseAndConv) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        for (bool smooth : {false, true}) {
            Model m = trial % 2 ? random_cnn(rng, smooth) : random_mlp(rng, smooth);
            Tensor x = random_tensor(m.input_shape(), rng);
            for (LossKind kind : {LossKind::Sce, LossKind::Mse})
                EXPECT_LT(max_input_gradient_error(m, x, 0, kind), 1e-4);
        }
    }
}

TEST(ParameterGradient, FiniteDifferenceCheck) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 6; ++trial) {
        Model m = trial % 2 ? random_cnn(rng, true) : random_mlp(rng, false);
        Tensor x = random_tensor(m.input_shape(), rng);
        EXPECT_LT(max_parameter_gradient_error(m, x, 1, LossKind::Sce), 1e-4);
    }
}

TEST(ParameterGradient, BatchNormLayer) {
    std::mt19937_64 rng(13);
    Model m({2, 3, 3},
            {LayerSpec::conv2d(2, 2, 3, 1, 1), LayerSpec::batchnorm(2), LayerSpec::rectifier(), LayerSpec::flatten(),
             LayerSpec::dense(18, 3)},
            3);
    gga::testing::randomize(m, rng);
    for (std::size_t c = 0; c < 2; ++c) m.params()[1][3][c] = 0.5 + c;  // positive variances
    Tensor x = random_tensor(m.input_shape(), rng);
    EXPECT_LT(max_parameter_gradient_error(m, x, 2, LossKind::Sce), 1e-4);
    EXPECT_LT(max_input_gradient_error(m, x, 2, LossKind::Sce), 1e-4);
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
    Model m({2}, {LayerSpec::batchnorm(2), LayerSpec::dense(2, 2)}, 2);
    m.params()[0][0] = Tensor::vector({2.0, 1.0});   // gamma
    m.params()[0][1] = Tensor::vector({0.5, -1.0});  // beta
    m.params()[0][2] = Tensor::vector({1.0, 3.0});   // running mean
    m.params()[0][3] = Tensor::vector({4.0, 0.25});  // running var
    m.params()[1][0] = Tensor({2, 2}, std::vector<double>{1, 0, 0, 1});
    const Tensor out = forward(m, Tensor::vector({3.0, 2.0}));
    EXPECT_NEAR(out[0], 2.0 * (2.0 / std::sqrt(4.0 + 1e-5)) + 0.5, 1e-12);
    EXPECT_NEAR(out[1], 1.0 * (-1.0 / std::sqrt(0.25 + 1e-5)) - 1.0, 1e-12);
}

TEST(Train, SeparableBlobsReachHighAccuracy) {
    LabeledDataset data = gen_blobs(400, 2, 2, 10.0, 4);
    Model m = make_mlp(2, {16}, 2);
    m.init_parameters(0);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.1;
    TrainResult r = train(m, data, cfg);
    ASSERT_EQ(r.history.size(), 20u);
    EXPECT_GE(accuracy(r.model, data), 0.99);
    EXPECT_NEAR(r.history[0].learning_rate, 0.1, 1e-15);
    EXPECT_NEAR(r.history[19].learning_rate, 0.1 / 125.0, 1e-15);
}

TEST(Train, ZeroEpochsIsNoOp) {
    Model m = make_mlp(2, {4}, 2);
    m.init_parameters(1);
    TrainConfig cfg;
    cfg.epochs = 0;
    TrainResult r = train(m, gen_blobs(10, 2, 2, 5.0, 0), cfg);
    EXPECT_EQ(r.model, m);
    EXPECT_TRUE(r.history.empty());
}

TEST(Train, SameSeedIsBitIdentical) {
    LabeledDataset data = gen_blobs(200, 3, 4, 4.0, 9);
    Model m = make_mlp(4, {8}, 3);
    m.init_parameters(2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 77;
    std::vector<double> losses_a, losses_b;
    TrainResult a = train(m, data, cfg, [&](const EpochStats& s) { losses_a.push_back(s.mean_loss); });
    TrainResult b = train(m, data, cfg, [&](const EpochStats& s) { losses_b.push_back(s.mean_loss); });
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(losses_a, losses_b);
    cfg.seed = 78;
    EXPECT_NE(train(m, data, cfg).model, a.model);
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
    LabeledDataset data = gen_blobs(20, 2, 2, 5.0, 0);
    Model m = make_mlp(2, {4}, 2);
    for (auto& layer : m.params())
        for (auto& t : layer) std::fill(t.values().begin(), t.values().end(), 1e300);
    TrainConfig cfg;
    cfg.epochs = 1;
    try {
        train(m, data, cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Numerical);
        EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    }
}

TEST(Train, RejectsBadConfigAndData) {
    TrainConfig cfg;
    cfg.lr_drop_points = {0.5, 0.4};
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.momentum = 1.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    Model m = make_mlp(2, {4}, 2);
    EXPECT_THROW(train(m, LabeledDataset{}, cfg), Error);
    LabeledDataset bad = gen_blobs(4, 2, 2, 5.0, 0);
    bad.labels[0] = 5;
    EXPECT_THROW(train(m, bad, cfg), Error);
}

TEST(Train, LearningRateSchedule) {
    TrainConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.epochs = 10;
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(0), 1.0);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(2), 1.0);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(3), 0.2);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(6), 0.04);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(8), 0.008);
}

TEST(Train, ShiftImage) {
    Tensor img({1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(shift_image(img, 0, 1, 0.0).raw(), (std::vector<double>{0, 1, 2, 0, 4, 5}));
    EXPECT_EQ(shift_image(img, -1, 0, 9.0).raw(), (std::vector<double>{4, 5, 6, 9, 9, 9}));
    EXPECT_EQ(shift_image(img, 0, 0, 0.0), img);
}

TEST(Swap, RoundTripRestoresDescriptors) {
    Model m = make_cnn({1, 28, 28}, 10);
    m.init_parameters(3);
    Model soft = swap_activations(m, ActivationMode::Softplus, 10.0);
    EXPECT_EQ(soft.activation_mode(), ActivationMode::Softplus);
    EXPECT_EQ(soft.params(), m.params());
    Model back = swap_activations(soft, ActivationMode::Rectifier);
    EXPECT_EQ(back.layers(), m.layers());
    EXPECT_EQ(back, m);
}

TEST(Swap, LargeBetaApproximatesRectifier) {
    std::mt19937_64 rng(17);
    Model relu({1}, {LayerSpec::dense(1, 64), LayerSpec::rectifier(), LayerSpec::dense(64, 64)}, 64);
    auto& w = relu.params()[0][0];
    auto& b = relu.params()[0][1];
    for (std::size_t i = 0; i < 64; ++i) {
        w[i] = 1.0;
        b[i] = -10.0 + 20.0 * static_cast<double>(i) / 63.0;
    }
    auto& w2 = relu.params()[2][0];
    for (std::size_t i = 0; i < 64; ++i) w2[i * 64 + i] = 1.0;
    Model soft = swap_activations(relu, ActivationMode::Softplus, 100.0);
    const Tensor a = forward(relu, Tensor::vector({0.0}));
    const Tensor s = forward(soft, Tensor::vector({0.0}));
    for (std::size_t i = 0; i < 64; ++i) EXPECT_LT(std::abs(a[i] - s[i]), 0.01);
}

TEST(Swap, NoActivationLayersMeansIdenticalLogits) {
    Model m = dense_model({1, 2, 3, 4}, {0.1, 0.2});
    Model s = swap_activations(m, ActivationMode::Softplus);
    Tensor x = Tensor::vector({0.3, -0.7});
    EXPECT_EQ(forward(m, x), forward(s, x));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(19);
    Model m = make_cnn({1, 12, 12}, 5, 20);
    m.init_parameters(4);
    Model soft = swap_activations(m, ActivationMode::Softplus, 7.5);
    const auto path = std::filesystem::temp_directory_path() / "gga_model_roundtrip.gga";
    for (const Model& mm : {m, soft}) {
        save_model(path, mm);
        Model loaded = load_model(path);
        EXPECT_EQ(loaded, mm);
        for (int i = 0; i < 5; ++i) {
            Tensor x = random_tensor(mm.input_shape(), rng, 0, 1);
            EXPECT_EQ(forward(loaded, x), forward(mm, x));
        }
    }
    std::filesystem::remove(path);
}

TEST(Init, SeededAndFanInScaled) {
    Model a = make_mlp(100, {50}, 10), b = a;
    a.init_parameters(5);
    b.init_parameters(5);
    EXPECT_EQ(a, b);
    for (double v : a.params()[0][0].values()) EXPECT_LE(std::abs(v), 0.1);
    for (double v : a.params()[2][0].values()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(50.0));
    b.init_parameters(6);
    EXPECT_NE(a, b);
}
