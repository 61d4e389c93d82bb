#include "gga/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include "gga/error.hpp"
#include "gga/parallel.hpp"
#include "gga/saliency.hpp"

namespace gga {
namespace {

Tensor clip(const Tensor& x, double lo, double hi) {
    Tensor out = x;
    for (auto& v : out.values()) v = std::clamp(v, lo, hi);
    return out;
}

// Projects x_adv onto the epsilon ball around x, then onto the domain.
void project(const Tensor& x, Tensor& x_adv, const AttackConfig& cfg) {
    const std::size_t n = x.size();
    if (cfg.norm == NormKind::Linf) {
        for (std::size_t i = 0; i < n; ++i) x_adv[i] = std::clamp(x_adv[i], x[i] - cfg.epsilon, x[i] + cfg.epsilon);
    } else {
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) sq += (x_adv[i] - x[i]) * (x_adv[i] - x[i]);
        const double len = std::sqrt(sq);
        if (len > cfg.epsilon) {
            const double s = cfg.epsilon / len;
            for (std::size_t i = 0; i < n; ++i) x_adv[i] = x[i] + (x_adv[i] - x[i]) * s;
        }
    }
    for (auto& v : x_adv.values()) v = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
}

// Uniform sample from the epsilon ball of the configured norm.
std::vector<double> ball_sample(std::size_t d, const AttackConfig& cfg, std::mt19937_64& rng) {
    std::vector<double> u(d, 0.0);
    if (cfg.epsilon == 0.0) return u;
    if (cfg.norm == NormKind::Linf) {
        std::uniform_real_distribution<double> unif(-cfg.epsilon, cfg.epsilon);
        for (auto& v : u) v = unif(rng);
        return u;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : u) v = normal(rng);
    const double len = norm2(u);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double r = cfg.epsilon * std::pow(unif(rng), 1.0 / static_cast<double>(d));
    for (auto& v : u) v *= len > 0.0 ? r / len : 0.0;
    return u;
}

using GradientFn = std::function<Tensor(const Tensor&)>;

// Shared projected-gradient loop. direction = +1 ascends, -1 descends.
AttackResult projected_gradient(const Tensor& x, const AttackConfig& cfg, const GradientFn& grad_fn, double direction) {
    std::mt19937_64 rng(cfg.seed);
    AttackResult r;
    r.x_adv = clip(x, cfg.clip_lo, cfg.clip_hi);
    if (cfg.random_start) {
        const auto u = ball_sample(x.size(), cfg, rng);
        for (std::size_t i = 0; i < x.size(); ++i) r.x_adv[i] += u[i];
        project(x, r.x_adv, cfg);
    }
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Tensor g = grad_fn(r.x_adv);
        if (!g.all_finite()) throw numerical_error("non-finite attack gradient at iteration " + std::to_string(it));
        if (norm_inf(g.values()) == 0.0) {
            // Flat region: take a random step instead.
            ++r.zero_gradient_steps;
            std::normal_distribution<double> normal(0.0, 1.0);
            for (auto& v : g.values()) v = normal(rng);
        }
        if (cfg.norm == NormKind::Linf) {
            for (std::size_t i = 0; i < x.size(); ++i)
                r.x_adv[i] += direction * cfg.step_size * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
        } else {
            const double len = norm2(g.values());
            for (std::size_t i = 0; i < x.size(); ++i) r.x_adv[i] += direction * cfg.step_size * g[i] / len;
        }
        project(x, r.x_adv, cfg);
        ++r.iterations;
    }
    return r;
}

}  // namespace

std::string to_string(NormKind norm) { return norm == NormKind::L2 ? "l2" : "linf"; }

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0)) throw usage_error("attack epsilon must be non-negative");
    if (!(step_size > 0.0)) throw usage_error("attack step size must be positive");
    if (!(csa_weight >= 0.0 && csa_weight <= 1.0)) throw usage_error("csa weight must lie in [0,1]");
    if (!(clip_lo < clip_hi)) throw usage_error("clip range must satisfy lo < hi");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over the combined value.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double perturbation_norm(const Tensor& a, const Tensor& b, NormKind norm) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        acc = norm == NormKind::Linf ? std::max(acc, d) : acc + d * d;
    }
    return norm == NormKind::Linf ? acc : std::sqrt(acc);
}

void evaluate_outcome(const Model& model, std::size_t y_true, AttackResult& r) {
    const Tensor logits = forward(model, r.x_adv);
    const auto p = softmax(logits.values());
    r.predicted = argmax(logits.values());
    r.final_confidence = p[r.predicted];
    r.success = r.predicted != y_true;
}

AttackResult pgd(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.target != TargetMode::None) throw usage_error("pgd is untargeted; use pgd_targeted");
    auto grad = [&](const Tensor& xa) { return input_gradient(model, xa, y_true, cfg.loss_kind); };
    AttackResult r = projected_gradient(x, cfg, grad, +1.0);
    evaluate_outcome(model, y_true, r);
    return r;
}

std::size_t choose_target(std::size_t num_classes, std::size_t y_true, const AttackConfig& cfg) {
    if (cfg.target == TargetMode::Fixed) {
        if (cfg.target_class >= num_classes) throw usage_error("target class out of range");
        return cfg.target_class;
    }
    if (num_classes < 2) throw usage_error("targeted attacks need at least two classes");
    // Separate stream from the attack's own RNG.
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a11));
    std::uniform_int_distribution<std::size_t> pick(0, num_classes - 2);
    const std::size_t t = pick(rng);
    return t >= y_true ? t + 1 : t;
}

AttackResult pgd_targeted(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg) {
    cfg.validate();
    if (cfg.target == TargetMode::None) throw usage_error("pgd_targeted needs a target mode");
    const std::size_t target = choose_target(model.num_classes(), y_true, cfg);
    if (target == y_true) throw usage_error("target class equals the true class");

    AttackResult r;
    if (predict(model, clip(x, cfg.clip_lo, cfg.clip_hi)) == target) {
        r.x_adv = clip(x, cfg.clip_lo, cfg.clip_hi);
    } else {
        auto grad = [&](const Tensor& xa) { return input_gradient(model, xa, target, cfg.loss_kind); };
        r = projected_gradient(x, cfg, grad, -1.0);
    }
    r.target = target;
    evaluate_outcome(model, y_true, r);
    return r;
}

double csa_objective(const Model& model, const Tensor& x, std::size_t predicted) {
    const std::size_t c = model.num_classes();
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < c; ++i)
        if (i != predicted) others.push_back(i);
    if (others.size() < 2) return 0.0;
    const auto g = input_gradients(model, x, others, LossKind::Sce);
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b, ++pairs) sum += cosine(g[a].values(), g[b].values());
    return sum / static_cast<double>(pairs);
}

Tensor csa_gradient(const Model& model, const Tensor& x, std::size_t predicted, double h) {
    const std::size_t c = model.num_classes();
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < c; ++i)
        if (i != predicted) others.push_back(i);
    Tensor total(x.shape());
    if (others.size() < 2) return total;
    const auto g = input_gradients(model, x, others, LossKind::Sce);
    const std::size_t m = g.size();
    const double pairs = static_cast<double>(m * (m - 1) / 2);
    std::vector<double> norms(m);
    for (std::size_t a = 0; a < m; ++a) norms[a] = norm2(g[a].values());

    // u_a = d objective / d g_a
    std::vector<Tensor> u(m, Tensor(x.shape()));
    for (std::size_t a = 0; a < m; ++a) {
        if (norms[a] == 0.0) continue;
        for (std::size_t b = 0; b < m; ++b) {
            if (b == a || norms[b] == 0.0) continue;
            const double cab = dot(g[a].values(), g[b].values()) / (norms[a] * norms[b]);
            const double k1 = 1.0 / (norms[a] * norms[b]);
            const double k2 = cab / (norms[a] * norms[a]);
            for (std::size_t i = 0; i < x.size(); ++i) u[a][i] += (k1 * g[b][i] - k2 * g[a][i]) / pairs;
        }
    }
    // Chain rule through g_a = grad L_a(x): contribution H_a u_a, with the
    // Hessian-vector product from central differences of the gradient.
    for (std::size_t a = 0; a < m; ++a) {
        const double len = norm2(u[a].values());
        if (len == 0.0) continue;
        Tensor xp = x, xm = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            xp[i] += h * u[a][i] / len;
            xm[i] -= h * u[a][i] / len;
        }
        const Tensor gp = input_gradient(model, xp, others[a], LossKind::Sce);
        const Tensor gm = input_gradient(model, xm, others[a], LossKind::Sce);
        for (std::size_t i = 0; i < x.size(); ++i) total[i] += (gp[i] - gm[i]) / (2.0 * h) * len;
    }
    return total;
}

AttackResult csa(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg) {
    cfg.validate();
    if (model.activation_mode() != ActivationMode::Softplus)
        throw usage_error("the cosine-similarity attack needs smooth activations; swap the model to softplus first");
    const double w = cfg.csa_weight;
    auto grad = [&](const Tensor& xa) {
        Tensor g = input_gradient(model, xa, y_true, LossKind::Sce);
        if (w == 0.0) return g;
        const std::size_t predicted = predict(model, xa);
        const Tensor gc = csa_gradient(model, xa, predicted);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * gc[i] + (1.0 - w) * g[i];
        return g;
    };
    AttackResult r = projected_gradient(x, cfg, grad, +1.0);
    evaluate_outcome(model, y_true, r);
    return r;
}

AttackResult noise_attack(const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const auto u = ball_sample(x.size(), cfg, rng);
    AttackResult r;
    r.x_adv = x;
    for (std::size_t i = 0; i < x.size(); ++i) r.x_adv[i] = std::clamp(x[i] + u[i], cfg.clip_lo, cfg.clip_hi);
    return r;
}

Tensor rotate(const Tensor& image, double degrees, double fill) {
    const Shape& s = image.shape();
    if (s.size() != 2 && s.size() != 3) throw usage_error("rotate expects an [H,W] or [C,H,W] image");
    if (degrees == 0.0) return image;
    const std::size_t channels = s.size() == 3 ? s[0] : 1, h = s[s.size() - 2], w = s.back();
    double cs, sn;
    const double turns = degrees / 90.0;
    if (turns == std::round(turns)) {
        // Exact trig for quarter turns so they reduce to permutations.
        static constexpr double kCos[] = {1, 0, -1, 0}, kSin[] = {0, 1, 0, -1};
        const auto q = static_cast<std::size_t>(((static_cast<long long>(turns) % 4) + 4) % 4);
        cs = kCos[q];
        sn = kSin[q];
    } else {
        const double rad = degrees * std::numbers::pi / 180.0;
        cs = std::cos(rad);
        sn = std::sin(rad);
    }
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor out(s, fill);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* src = image.data() + c * h * w;
        double* dst = out.data() + c * h * w;
        auto at = [&](long yy, long xx) {
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return fill;
            return src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
        };
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xo = 0; xo < w; ++xo) {
                // Inverse map: rotate the output coordinate back by -degrees.
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(xo) - cx;
                const double sx = cs * dx + sn * dy + cx;
                const double sy = -sn * dx + cs * dy + cy;
                const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                const auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
                if (x0 < -1 || y0 < -1 || x0 >= static_cast<long>(w) || y0 >= static_cast<long>(h)) continue;
                const double fx = sx - fx0, fy = sy - fy0;
                double v = at(y0, x0) * (1 - fx) * (1 - fy);
                if (fx != 0.0) v += at(y0, x0 + 1) * fx * (1 - fy);
                if (fy != 0.0) v += at(y0 + 1, x0) * (1 - fx) * fy;
                if (fx != 0.0 && fy != 0.0) v += at(y0 + 1, x0 + 1) * fx * fy;
                dst[y * w + xo] = v;
            }
    }
    return out;
}

AttackResult rotation_attack(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> angle(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    AttackResult r;
    r.x_adv = rotate(x, angle(rng), cfg.clip_lo);
    for (auto& v : r.x_adv.values()) v = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
    evaluate_outcome(model, y_true, r);
    return r;
}

AttackResult boundary_proximal(const Model& model, const Tensor& x, std::size_t y_true, const AttackConfig& cfg) {
    cfg.validate();
    const Tensor start = clip(x, cfg.clip_lo, cfg.clip_hi);
    if (predict(model, start) != y_true) {
        AttackResult r;
        r.x_adv = start;
        evaluate_outcome(model, y_true, r);
        return r;
    }
    AttackConfig untargeted = cfg;
    untargeted.target = TargetMode::None;
    AttackResult adv = pgd(model, x, y_true, untargeted);
    if (!adv.success) return adv;

    // Invariant: the point at t = hi is misclassified, at t = lo it is not.
    double lo = 0.0, hi = 1.0;
    auto point = [&](double t) {
        Tensor p = start;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = start[i] + t * (adv.x_adv[i] - start[i]);
        return p;
    };
    for (std::size_t step = 0; step < kBisectionSteps; ++step) {
        const double mid = 0.5 * (lo + hi);
        (predict(model, point(mid)) != y_true ? hi : lo) = mid;
    }
    AttackResult r;
    r.x_adv = point(hi);
    project(x, r.x_adv, cfg);
    r.iterations = adv.iterations + kBisectionSteps;
    r.zero_gradient_steps = adv.zero_gradient_steps;
    evaluate_outcome(model, y_true, r);
    if (!r.success) {
        // Projection rounding pushed the point back across; keep the pgd result.
        return adv;
    }
    return r;
}

namespace {

std::vector<std::string> split_colon(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(p);
    return parts;
}

double parse_number(const std::string& key, const std::string& value) {
    const auto slash = value.find('/');
    try {
        if (slash != std::string::npos) return std::stod(value.substr(0, slash)) / std::stod(value.substr(slash + 1));
        return std::stod(value);
    } catch (const std::exception&) {
        throw usage_error("attack option '" + key + "' has a non-numeric value '" + value + "'");
    }
}

}  // namespace

AttackSpec parse_attack_spec(const std::string& text) {
    const auto parts = split_colon(text);
    if (parts.empty() || parts[0].empty()) throw usage_error("empty attack spec");
    AttackSpec spec;
    spec.text = text;
    spec.kind = parts[0];
    static const char* kinds[] = {"pgd", "tsce", "tmse", "csa", "noise", "rotate", "boundary"};
    if (std::find(std::begin(kinds), std::end(kinds), spec.kind) == std::end(kinds))
        throw usage_error("unknown attack kind '" + spec.kind + "'");

    AttackConfig& cfg = spec.cfg;
    cfg.iterations = spec.kind == "tsce" || spec.kind == "tmse" || spec.kind == "csa" ? 100 : 70;
    if (spec.kind == "tsce" || spec.kind == "tmse") {
        cfg.target = TargetMode::RandomNonTrue;
        cfg.loss_kind = spec.kind == "tmse" ? LossKind::Mse : LossKind::Sce;
    }
    bool eps_set = false, step_set = false;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const std::string& p = parts[i];
        if (p == "linf") { cfg.norm = NormKind::Linf; continue; }
        if (p == "l2") { cfg.norm = NormKind::L2; continue; }
        const auto eq = p.find('=');
        if (eq == std::string::npos) throw usage_error("malformed attack option '" + p + "'");
        const std::string key = p.substr(0, eq), value = p.substr(eq + 1);
        if (key == "eps") { cfg.epsilon = parse_number(key, value); eps_set = true; }
        else if (key == "alpha" || key == "step") { cfg.step_size = parse_number(key, value); step_set = true; }
        else if (key == "iters") cfg.iterations = static_cast<std::size_t>(parse_number(key, value));
        else if (key == "loss") cfg.loss_kind = parse_loss_kind(value);
        else if (key == "w") cfg.csa_weight = parse_number(key, value);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_number(key, value));
        else if (key == "lo") cfg.clip_lo = parse_number(key, value);
        else if (key == "hi") cfg.clip_hi = parse_number(key, value);
        else if (key == "maxdeg") cfg.max_rotation_deg = parse_number(key, value);
        else if (key == "start") cfg.random_start = value != "none";
        else if (key == "target") {
            if (value == "random") cfg.target = TargetMode::RandomNonTrue;
            else {
                cfg.target = TargetMode::Fixed;
                cfg.target_class = static_cast<std::size_t>(parse_number(key, value));
            }
        } else throw usage_error("unknown attack option '" + key + "'");
    }
    if (!eps_set) cfg.epsilon = cfg.norm == NormKind::L2 ? kL2BudgetFactor * kEpsImage : kEpsImage;
    if (!step_set) cfg.step_size = cfg.epsilon / 4.0;
    if (cfg.step_size <= 0.0) cfg.step_size = 1e-12;
    cfg.validate();
    return spec;
}

AttackResult run_attack(const Model& model, const Tensor& x, std::size_t y_true, const AttackSpec& spec) {
    if (spec.kind == "pgd") return pgd(model, x, y_true, spec.cfg);
    if (spec.kind == "tsce" || spec.kind == "tmse") return pgd_targeted(model, x, y_true, spec.cfg);
    if (spec.kind == "csa") return csa(model, x, y_true, spec.cfg);
    if (spec.kind == "rotate") return rotation_attack(model, x, y_true, spec.cfg);
    if (spec.kind == "boundary") return boundary_proximal(model, x, y_true, spec.cfg);
    AttackResult r = noise_attack(x, spec.cfg);
    evaluate_outcome(model, y_true, r);
    return r;
}

AttackBatch run_attack_batch(const Model& model, const LabeledDataset& data, const AttackSpec& spec) {
    AttackBatch batch;
    batch.results.resize(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        if (data.labels[i] < 0) throw data_error("cannot attack unlabeled sample " + std::to_string(i));
        AttackSpec local = spec;
        local.cfg.seed = mix_seed(spec.cfg.seed, i);
        batch.results[i] = run_attack(model, data.inputs[i], static_cast<std::size_t>(data.labels[i]), local);
    });
    batch.adversarial.domain_lo = data.domain_lo;
    batch.adversarial.domain_hi = data.domain_hi;
    batch.adversarial.tag = spec.kind == "rotate" || spec.cfg.norm == NormKind::Linf ? spec.kind : spec.kind + "-l2";
    for (std::size_t i = 0; i < data.size(); ++i) {
        batch.adversarial.inputs.push_back(batch.results[i].x_adv);
        batch.adversarial.labels.push_back(data.labels[i]);
        batch.success.push_back(batch.results[i].success);
    }
    return batch;
}

LabeledDataset successful_only(const AttackBatch& batch) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < batch.success.size(); ++i)
        if (batch.success[i]) keep.push_back(i);
    LabeledDataset out;
    out.domain_lo = batch.adversarial.domain_lo;
    out.domain_hi = batch.adversarial.domain_hi;
    out.tag = batch.adversarial.tag;
    for (auto i : keep) {
        out.inputs.push_back(batch.adversarial.inputs[i]);
        out.labels.push_back(batch.adversarial.labels[i]);
    }
    return out;
}

}  // namespace gga
