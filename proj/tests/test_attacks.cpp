#include <cmath>
#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "gga/attacks.hpp"
#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/features.hpp"
#include "support.hpp"

using namespace gga;
using gga::testing::linear_model;
using gga::testing::random_mlp;
using gga::testing::random_tensor;

namespace {

// logits = [w.x + b, -(w.x + b)]
Model binary_linear(const std::vector<double>& w, double bias = 0.0) {
    std::vector<double> neg(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) neg[i] = -w[i];
    Model m = linear_model({w, neg});
    m.params()[0][1] = Tensor::vector({bias, -bias});
    return m;
}

AttackConfig plain(double eps, double step, std::size_t iters) {
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.step_size = step;
    cfg.iterations = iters;
    cfg.random_start = false;
    cfg.clip_lo = -10.0;
    cfg.clip_hi = 10.0;
    return cfg;
}

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

Model trained_blob_model(std::size_t classes, std::size_t dim, std::uint64_t seed, LabeledDataset* data_out) {
    LabeledDataset data = gen_blobs(60 * classes, classes, dim, 3.0, seed);
    Model m = make_mlp(dim, {32}, classes);
    m.init_parameters(seed);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    Model trained = train(m, data, cfg).model;
    if (data_out) *data_out = data;
    return trained;
}

}  // namespace

TEST(Pgd, SingleLinfStepOnLinearModel) {
    const std::vector<double> w{0.5, -1.0, 2.0, 0.0};
    Model m = binary_linear(w);
    Tensor x = Tensor::vector({0.3, 0.1, 0.2, 0.4});
    const Tensor g = input_gradient(m, x, 0);
    AttackResult r = pgd(m, x, 0, plain(1.0, 0.05, 1));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.x_adv[i], x[i] + 0.05 * sgn(g[i]));
    EXPECT_EQ(r.iterations, 1u);
}

TEST(Pgd, SingleL2StepOnLinearModel) {
    const std::vector<double> w{0.5, -1.0, 2.0};
    Model m = binary_linear(w);
    Tensor x = Tensor::vector({0.3, 0.1, 0.2});
    const Tensor g = input_gradient(m, x, 0);
    AttackConfig cfg = plain(5.0, 0.1, 1);
    cfg.norm = NormKind::L2;
    AttackResult r = pgd(m, x, 0, cfg);
    const double len = norm2(g.values());
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.x_adv[i], x[i] + 0.1 * g[i] / len, 1e-15);
}

TEST(Pgd, ZeroBudgetLeavesInputClipped) {
    Model m = binary_linear({1.0, 1.0});
    Tensor x = Tensor::vector({0.6, 1.2});
    AttackConfig cfg = plain(0.0, 0.1, 10);
    cfg.clip_lo = 0.0;
    cfg.clip_hi = 1.0;
    cfg.random_start = true;
    AttackResult r = pgd(m, x, 0, cfg);
    EXPECT_EQ(r.x_adv.raw(), (std::vector<double>{0.6, 1.0}));
    EXPECT_FALSE(r.success);
}

TEST(Pgd, FlatRegionTakesRandomSteps) {
    Model m({2}, {LayerSpec::dense(2, 2)}, 2);  // all-zero weights
    AttackResult r = pgd(m, Tensor::vector({0.5, 0.5}), 0, plain(0.2, 0.05, 3));
    EXPECT_EQ(r.zero_gradient_steps, 3u);
    EXPECT_NE(r.x_adv.raw(), (std::vector<double>{0.5, 0.5}));
}

TEST(Pgd, RejectsTargetedConfig) {
    Model m = binary_linear({1.0});
    AttackConfig cfg = plain(0.1, 0.1, 1);
    cfg.target = TargetMode::Fixed;
    EXPECT_THROW(pgd(m, Tensor::vector({0.1}), 0, cfg), Error);
    cfg = plain(0.1, 0.0, 1);
    EXPECT_THROW(pgd(m, Tensor::vector({0.1}), 0, cfg), Error);
}

TEST(Targeted, AlreadyAtTargetNeedsNoPerturbation) {
    Model m = binary_linear({1.0, 1.0});
    Tensor x = Tensor::vector({-0.5, -0.2});  // predicted class 1
    AttackConfig cfg = plain(0.3, 0.1, 100);
    cfg.target = TargetMode::Fixed;
    cfg.target_class = 1;
    cfg.random_start = true;
    AttackResult r = pgd_targeted(m, x, 0, cfg);
    EXPECT_TRUE(r.success);
    EXPECT_EQ(r.x_adv, x);
    EXPECT_EQ(r.target, 1u);
}

TEST(Targeted, SingleStepRaisesTargetProbability) {
    const std::vector<std::vector<double>> w{{1.0, -0.5, 0.2}, {0.3, 0.8, -1.0}, {-0.6, 0.1, 0.9}};
    Model m = linear_model(w);
    Tensor x = Tensor::vector({0.8, 0.1, -0.2});  // predicted class 0
    for (std::size_t target : {1u, 2u}) {
        AttackConfig cfg = plain(1.0, 0.01, 1);
        cfg.target = TargetMode::Fixed;
        cfg.target_class = target;
        for (LossKind kind : {LossKind::Sce, LossKind::Mse}) {
            cfg.loss_kind = kind;
            AttackResult r = pgd_targeted(m, x, 0, cfg);
            EXPECT_GT(softmax(forward(m, r.x_adv).values())[target], softmax(forward(m, x).values())[target]);
        }
    }
}

TEST(Targeted, RandomTargetIsSeededAndNeverTrue) {
    AttackConfig cfg;
    cfg.target = TargetMode::RandomNonTrue;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        cfg.seed = seed;
        const std::size_t t = choose_target(10, seed % 10, cfg);
        EXPECT_NE(t, seed % 10);
        EXPECT_LT(t, 10u);
        EXPECT_EQ(t, choose_target(10, seed % 10, cfg));
    }
    cfg.target = TargetMode::Fixed;
    cfg.target_class = 3;
    Model m = binary_linear({1.0});
    EXPECT_THROW(pgd_targeted(m, Tensor::vector({0.1}), 0, cfg), Error);
}

TEST(Csa, RequiresSmoothActivations) {
    std::mt19937_64 rng(1);
    Model m = random_mlp(rng, false);
    try {
        csa(m, random_tensor(m.input_shape(), rng), 0, AttackConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Usage);
        EXPECT_NE(std::string(e.what()).find("softplus"), std::string::npos);
    }
}

TEST(Csa, ZeroWeightFollowsPgdTrajectory) {
    std::mt19937_64 rng(2);
    Model m = random_mlp(rng, true);
    Tensor x = random_tensor(m.input_shape(), rng, 0, 1);
    AttackConfig cfg;
    cfg.csa_weight = 0.0;
    cfg.iterations = 100;
    cfg.seed = 42;
    EXPECT_EQ(csa(m, x, 1, cfg).x_adv, pgd(m, x, 1, cfg).x_adv);
}

TEST(Csa, GradientAgreesWithFiniteDifferences) {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Model m = random_mlp(rng, true);
        if (m.num_classes() < 4) continue;
        Tensor x = random_tensor(m.input_shape(), rng);
        const std::size_t predicted = predict(m, x);
        const Tensor g = csa_gradient(m, x, predicted);
        Tensor fd(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            Tensor p = x, q = x;
            p[i] += 1e-5;
            q[i] -= 1e-5;
            fd[i] = (csa_objective(m, p, predicted) - csa_objective(m, q, predicted)) / 2e-5;
        }
        if (norm2(fd.values()) < 1e-8) continue;
        EXPECT_GE(cosine(g.values(), fd.values()), 0.95);
        ++checked;
    }
    EXPECT_GE(checked, 5);
}

TEST(Csa, MaximizingObjectiveRaisesMeanS1) {
    LabeledDataset data;
    Model relu = trained_blob_model(8, 12, 4, &data);
    Model smooth = swap_activations(relu, ActivationMode::Softplus, 10.0);
    std::size_t raised = 0, total = 0;
    for (std::size_t i = 0; i < 30; ++i) {
        const Tensor& x = data.inputs[i];
        AttackConfig cfg;
        cfg.csa_weight = 1.0;
        cfg.epsilon = 10.0;
        cfg.step_size = 0.01;
        cfg.iterations = 20;
        cfg.random_start = false;
        cfg.clip_lo = -100.0;
        cfg.clip_hi = 100.0;
        AttackResult r = csa(smooth, x, static_cast<std::size_t>(data.labels[i]), cfg);
        const double before = features(csm(smooth, x)).s1.mean;
        const double after = features(csm(smooth, r.x_adv)).s1.mean;
        raised += after > before;
        ++total;
    }
    EXPECT_GE(static_cast<double>(raised), 0.8 * static_cast<double>(total));
}

TEST(Noise, ZeroBudgetIsClip) {
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    Tensor x = Tensor::vector({-0.5, 0.5, 1.5});
    EXPECT_EQ(noise_attack(x, cfg).x_adv.raw(), (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(Noise, UniformPerturbationIsCentred) {
    AttackConfig cfg = plain(0.3, 0.1, 1);
    Tensor x({3}, 0.0);
    const std::size_t draws = 100000;
    std::vector<double> sum(3, 0.0);
    for (std::size_t k = 0; k < draws; ++k) {
        cfg.seed = k;
        const AttackResult r = noise_attack(x, cfg);
        for (std::size_t i = 0; i < 3; ++i) {
            ASSERT_LE(std::abs(r.x_adv[i]), 0.3);
            sum[i] += r.x_adv[i];
        }
    }
    const double sigma = 0.3 / std::sqrt(3.0) / std::sqrt(static_cast<double>(draws));
    for (double s : sum) EXPECT_LE(std::abs(s / static_cast<double>(draws)), 3.0 * sigma);
}

TEST(Noise, L2BallAndSeeding) {
    AttackConfig cfg = plain(2.0, 0.1, 1);
    cfg.norm = NormKind::L2;
    Tensor x({50}, 0.0);
    for (std::uint64_t s = 0; s < 100; ++s) {
        cfg.seed = s;
        const AttackResult r = noise_attack(x, cfg);
        EXPECT_LE(norm2(r.x_adv.values()), 2.0 + 1e-12);
        EXPECT_EQ(r.x_adv, noise_attack(x, cfg).x_adv);
    }
}

TEST(Rotate, ZeroDegreesIsIdentity) {
    std::mt19937_64 rng(4);
    Tensor img = random_tensor({1, 7, 7}, rng, 0, 1);
    EXPECT_EQ(rotate(img, 0.0, 0.0), img);
}

TEST(Rotate, QuarterTurnsArePermutations) {
    std::mt19937_64 rng(5);
    for (std::size_t n : {4u, 5u, 8u}) {
        Tensor img = random_tensor({2, n, n}, rng, 0, 1);
        Tensor r = rotate(img, 90.0, -1.0);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    EXPECT_EQ(r[c * n * n + y * n + x], img[c * n * n + (n - 1 - x) * n + y]);
                }
        Tensor full = img;
        for (int k = 0; k < 4; ++k) full = rotate(full, 90.0, -1.0);
        for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(full[i], img[i], 1e-9);
        EXPECT_EQ(rotate(img, 360.0, -1.0), img);
    }
}

TEST(Rotate, HalfTurnOfSymmetricImage) {
    Tensor img({5, 5}, 0.0);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            const double v = u(rng);
            img[y * 5 + x] = v;
            img[(4 - y) * 5 + (4 - x)] = v;
        }
    EXPECT_EQ(rotate(img, 180.0, 0.0), img);
}

TEST(Rotate, CornersTakeFillValue) {
    Tensor img({1, 9, 9}, 1.0);
    Tensor r = rotate(img, 45.0, 0.0);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_NEAR(r[4 * 9 + 4], 1.0, 1e-12);
    EXPECT_THROW(rotate(Tensor::vector({1, 2}), 10.0, 0.0), Error);
}

TEST(Boundary, BisectionFindsLinearCrossing) {
    const std::vector<double> w{1.0, -0.5, 0.25};
    Model m = binary_linear(w, 0.1);
    Tensor x = Tensor::vector({0.4, 0.1, 0.2});
    AttackConfig cfg = plain(2.0, 0.5, 10);
    const AttackResult strong = pgd(m, x, 0, cfg);
    ASSERT_TRUE(strong.success);
    const AttackResult r = boundary_proximal(m, x, 0, cfg);
    ASSERT_TRUE(r.success);
    // Crossing parameter where w.(x + t d) + b = 0.
    double wx = 0.1, wd = 0.0, dd = 0.0, rd = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double d = strong.x_adv[i] - x[i];
        wx += w[i] * x[i];
        wd += w[i] * d;
        dd += d * d;
        rd += (r.x_adv[i] - x[i]) * d;
    }
    const double t_cross = -wx / wd;
    const double t = rd / dd;
    EXPECT_GE(t, t_cross - 1e-12);
    EXPECT_LE(t - t_cross, std::ldexp(1.0, -20));
    EXPECT_LT(r.final_confidence, strong.final_confidence);
}

TEST(Boundary, MisclassifiedInputReturnedUnchanged) {
    Model m = binary_linear({1.0, 1.0});
    Tensor x = Tensor::vector({-0.3, -0.2});
    AttackResult r = boundary_proximal(m, x, 0, plain(0.3, 0.1, 5));
    EXPECT_TRUE(r.success);
    EXPECT_EQ(r.x_adv, x);
}

TEST(Boundary, PgdFailureIsReported) {
    Model m = binary_linear({1.0, 1.0});
    AttackResult r = boundary_proximal(m, Tensor::vector({3.0, 3.0}), 0, plain(0.1, 0.05, 5));
    EXPECT_FALSE(r.success);
}

TEST(Boundary, LowerConfidenceThanPgdOnTrainedModel) {
    LabeledDataset data;
    Model m = trained_blob_model(5, 8, 7, &data);
    AttackConfig cfg;
    cfg.epsilon = 0.3;
    cfg.step_size = 0.075;
    std::size_t both = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        cfg.seed = i;
        const auto y = static_cast<std::size_t>(data.labels[i]);
        AttackResult p = pgd(m, data.inputs[i], y, cfg);
        AttackResult b = boundary_proximal(m, data.inputs[i], y, cfg);
        if (!p.success || !b.success || predict(m, data.inputs[i]) != y) continue;
        ++both;
        EXPECT_LT(b.final_confidence, p.final_confidence);
    }
    EXPECT_GT(both, 0u);
}

TEST(AttackSpec, Defaults) {
    AttackSpec s = parse_attack_spec("pgd");
    EXPECT_EQ(s.cfg.norm, NormKind::Linf);
    EXPECT_DOUBLE_EQ(s.cfg.epsilon, 0.3);
    EXPECT_DOUBLE_EQ(s.cfg.step_size, 0.075);
    EXPECT_EQ(s.cfg.iterations, 70u);
    s = parse_attack_spec("pgd:l2");
    EXPECT_DOUBLE_EQ(s.cfg.epsilon, 3.0);
    s = parse_attack_spec("tmse:eps=8/255");
    EXPECT_EQ(s.cfg.iterations, 100u);
    EXPECT_EQ(s.cfg.loss_kind, LossKind::Mse);
    EXPECT_EQ(s.cfg.target, TargetMode::RandomNonTrue);
    EXPECT_DOUBLE_EQ(s.cfg.epsilon, 8.0 / 255.0);
    s = parse_attack_spec("csa:w=0.5:iters=7:seed=9:start=none");
    EXPECT_EQ(s.cfg.iterations, 7u);
    EXPECT_DOUBLE_EQ(s.cfg.csa_weight, 0.5);
    EXPECT_EQ(s.cfg.seed, 9u);
    EXPECT_FALSE(s.cfg.random_start);
}

TEST(AttackSpec, Errors) {
    for (const char* bad : {"", "fgsm", "pgd:eps", "pgd:eps=abc", "pgd:bogus=1", "csa:w=2", "pgd:lo=1:hi=0"})
        EXPECT_THROW(parse_attack_spec(bad), Error) << bad;
}

TEST(AttackBatch, IndependentOfThreadCount) {
    LabeledDataset data;
    Model m = trained_blob_model(4, 6, 9, &data);
    LabeledDataset part = subset(data, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    AttackSpec spec = parse_attack_spec("pgd:eps=0.2:iters=5:seed=3");
    setenv("GGA_THREADS", "1", 1);
    AttackBatch one = run_attack_batch(m, part, spec);
    setenv("GGA_THREADS", "4", 1);
    AttackBatch four = run_attack_batch(m, part, spec);
    unsetenv("GGA_THREADS");
    for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(one.adversarial.inputs[i], four.adversarial.inputs[i]);
    EXPECT_EQ(one.success, four.success);
    EXPECT_EQ(one.adversarial.tag, "pgd");
    EXPECT_EQ(run_attack_batch(m, part, parse_attack_spec("boundary:l2:iters=2")).adversarial.tag, "boundary-l2");
    LabeledDataset ok = successful_only(one);
    EXPECT_EQ(ok.size(), static_cast<std::size_t>(std::count(one.success.begin(), one.success.end(), true)));
}
