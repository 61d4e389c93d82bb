#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gga/dataset.hpp"
#include "gga/nn.hpp"

namespace gga {

enum class NormKind { Linf, L2 };
enum class TargetMode { None, RandomNonTrue, Fixed };

std::string to_string(NormKind norm);

/// Default l-inf budgets per data regime; l2 budgets are ten times larger.
inline constexpr double kEpsImage = 0.3;
inline constexpr double kEpsColor = 8.0 / 255.0;
inline constexpr double kEpsSeries = 0.1;
inline constexpr double kL2BudgetFactor = 10.0;

struct AttackConfig {
    NormKind norm = NormKind::Linf;
    double epsilon = kEpsImage;
    double step_size = kEpsImage / 4.0;
    std::size_t iterations = 70;
    LossKind loss_kind = LossKind::Sce;
    TargetMode target = TargetMode::None;
    std::size_t target_class = 0;
    double csa_weight = 0.8;
    double clip_lo = 0.0;
    double clip_hi = 1.0;
    std::uint64_t seed = 0;
    bool random_start = true;
    double max_rotation_deg = 45.0;

    /// epsilon may be 0 (zero budget); step_size must be positive.
    void validate() const;
};

struct AttackResult {
    Tensor x_adv;
    bool success = false;  // predicted class differs from the true label
    std::size_t iterations = 0;
    double final_confidence = 0.0;  // max softmax probability at x_adv
    std::size_t predicted = 0;
    std::size_t target = 0;                 // targeted attacks only
    std::size_t zero_gradient_steps = 0;    // steps that fell back to a random direction
};

/// Untargeted projected gradient ascent on the loss of y_true.
AttackResult pgd(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg);

/// Projected gradient descent on the loss of a target class (T-SCE / T-MSE).
AttackResult pgd_targeted(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg);

/// Target chosen by cfg: the fixed class or a seeded draw among classes != y_true.
std::size_t choose_target(std::size_t num_classes, std::size_t y_true, const AttackConfig& cfg);

/// Adaptive attack ascending csa_weight * L_csa + (1 - csa_weight) * CE.
/// Requires a softplus model.
AttackResult csa(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg);

/// Smooth cosine-similarity objective: mean cosine between the raw input
/// gradients of all class pairs that exclude `predicted`.
double csa_objective(const Model& model, const Tensor& x, std::size_t predicted);
/// Gradient of csa_objective with `predicted` held fixed. Hessian-vector
/// products come from central differences of input gradients with step h.
Tensor csa_gradient(const Model& model, const Tensor& x, std::size_t predicted, double h = 1e-4);

/// x + u clipped to the domain, u uniform in the l-inf box or the l2 ball.
/// success is left false; run through a model with evaluate_outcome.
AttackResult noise_attack(const Tensor& x, const AttackConfig& cfg);

/// Bilinear rotation about the image centre; pixels whose source falls
/// outside the frame take `fill`. Accepts [H,W] or [C,H,W].
Tensor rotate(const Tensor& image, double degrees, double fill);
/// Uniform random angle in [-max_rotation_deg, max_rotation_deg].
AttackResult rotation_attack(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg);

/// Low-confidence adversarial: runs pgd, then bisects the segment [x, x_pgd]
/// for the point closest to x that is still misclassified.
AttackResult boundary_proximal(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg);

inline constexpr std::size_t kBisectionSteps = 20;

/// Fills success/predicted/final_confidence of r from a forward pass.
void evaluate_outcome(const Model& model, std::size_t y_true, AttackResult& r);

/// Distance ||a - b|| in the given norm.
double perturbation_norm(const Tensor& a, const Tensor& b, NormKind norm);

/// Parsed "kind:key=value:..." string, e.g. "pgd:linf:eps=0.3:iters=70".
/// kinds: pgd, tsce, tmse, csa, noise, rotate, boundary.
struct AttackSpec {
    std::string kind;
    AttackConfig cfg;
    std::string text;
};

AttackSpec parse_attack_spec(const std::string& text);
AttackResult run_attack(const Model& model, const Tensor& x, std::size_t y_true, const AttackSpec& spec);

struct AttackBatch {
    LabeledDataset adversarial;  // one entry per input, tag = spec kind (+"-l2")
    std::vector<bool> success;
    std::vector<AttackResult> results;
};

/// Attacks every sample in parallel. Sample i uses seed mix(cfg.seed, i), so
/// results do not depend on the thread count.
AttackBatch run_attack_batch(const Model& model, const LabeledDataset& data, const AttackSpec& spec);
/// Only the successful entries, labels kept as the true labels.
LabeledDataset successful_only(const AttackBatch& batch);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace gga
