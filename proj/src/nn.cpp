#include "gga/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gga/error.hpp"
#include "gga/parallel.hpp"

namespace gga {
namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

std::string layer_label(std::size_t l, const LayerSpec& spec) {
    return "layer " + std::to_string(l) + " (" + to_string(spec.kind) + ")";
}

Shape output_shape(std::size_t l, const LayerSpec& spec, const Shape& in) {
    auto mismatch = [&](const std::string& expected) {
        return data_error(layer_label(l, spec) + ": expected input " + expected + ", got " + shape_string(in));
    };
    switch (spec.kind) {
        case LayerKind::Dense:
            if (in.size() != 1 || in[0] != spec.in) throw mismatch("[" + std::to_string(spec.in) + "]");
            return {spec.out};
        case LayerKind::Conv2d: {
            if (in.size() != 3 || in[0] != spec.in_ch)
                throw mismatch("[" + std::to_string(spec.in_ch) + ",H,W]");
            if (spec.stride == 0 || spec.kernel == 0 || in[1] + 2 * spec.pad < spec.kernel ||
                in[2] + 2 * spec.pad < spec.kernel)
                throw mismatch("spatial extent >= kernel " + std::to_string(spec.kernel));
            return {spec.out_ch, (in[1] + 2 * spec.pad - spec.kernel) / spec.stride + 1,
                    (in[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1};
        }
        case LayerKind::Rectifier:
        case LayerKind::Softplus:
            return in;
        case LayerKind::Flatten:
            return {shape_size(in)};
        case LayerKind::BatchNorm:
            if (in.empty() || in[0] != spec.channels)
                throw mismatch("[" + std::to_string(spec.channels) + ",...]");
            return in;
    }
    return in;
}

bool is_trainable(LayerKind kind, std::size_t param_index) {
    if (kind == LayerKind::BatchNorm) return param_index < 2;
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
}

const char* param_name(LayerKind kind, std::size_t i) {
    static const char* dense[] = {"weight", "bias"};
    static const char* bn[] = {"gamma", "beta", "running_mean", "running_var"};
    return kind == LayerKind::BatchNorm ? bn[i] : dense[i];
}

double stable_softplus(double z, double beta) {
    const double t = beta * z;
    if (t > 30.0) return z + std::log1p(std::exp(-t)) / beta;
    return std::log1p(std::exp(t)) / beta;
}

double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// Four partial sums keep the dependency chain short.
double fast_dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

struct ConvGeom {
    std::size_t ic, h, w, oc, oh, ow, k, s, p;
};

ConvGeom conv_geom(const LayerSpec& spec, const Shape& in, const Shape& out) {
    return {in[0], in[1], in[2], out[0], out[1], out[2], spec.kernel, spec.stride, spec.pad};
}

// Output columns ox whose input column ox*s + kx - p lies inside [0, w).
void valid_range(std::size_t k_off, std::size_t s, std::size_t p, std::size_t w, std::size_t ow, std::size_t& lo,
                 std::size_t& hi) {
    // ox*s + k_off >= p  and  ox*s + k_off - p < w
    lo = k_off >= p ? 0 : (p - k_off + s - 1) / s;
    const std::size_t lim = w + p;  // ox*s + k_off < w + p
    hi = lim > k_off ? std::min(ow, (lim - k_off + s - 1) / s) : 0;
    if (hi < lo) hi = lo;
}

void conv_forward(const ConvGeom& g, const Tensor& weight, const Tensor& bias, const double* in, double* out) {
    for (std::size_t o = 0; o < g.oc; ++o) {
        double* out_c = out + o * g.oh * g.ow;
        std::fill(out_c, out_c + g.oh * g.ow, bias[o]);
        for (std::size_t c = 0; c < g.ic; ++c) {
            const double* in_c = in + c * g.h * g.w;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                std::size_t oy_lo, oy_hi;
                valid_range(ky, g.s, g.p, g.h, g.oh, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const double wv = weight[((o * g.ic + c) * g.k + ky) * g.k + kx];
                    std::size_t ox_lo, ox_hi;
                    valid_range(kx, g.s, g.p, g.w, g.ow, ox_lo, ox_hi);
                    if (ox_lo >= ox_hi) continue;
                    const std::size_t ix0 = ox_lo * g.s + kx - g.p;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const double* row = in_c + (oy * g.s + ky - g.p) * g.w + ix0;
                        double* orow = out_c + oy * g.ow + ox_lo;
                        const std::size_t n = ox_hi - ox_lo;
                        if (g.s == 1)
                            for (std::size_t t = 0; t < n; ++t) orow[t] += wv * row[t];
                        else
                            for (std::size_t t = 0; t < n; ++t) orow[t] += wv * row[t * g.s];
                    }
                }
            }
        }
    }
}

void conv_backward(const ConvGeom& g, const Tensor& weight, const double* in, const double* dout, double* din,
                   Tensor* dweight, Tensor* dbias) {
    for (std::size_t o = 0; o < g.oc; ++o) {
        const double* dout_c = dout + o * g.oh * g.ow;
        if (dbias) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.oh * g.ow; ++i) s += dout_c[i];
            (*dbias)[o] += s;
        }
        for (std::size_t c = 0; c < g.ic; ++c) {
            const double* in_c = in + c * g.h * g.w;
            double* din_c = din + c * g.h * g.w;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                std::size_t oy_lo, oy_hi;
                valid_range(ky, g.s, g.p, g.h, g.oh, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::size_t widx = ((o * g.ic + c) * g.k + ky) * g.k + kx;
                    const double wv = weight[widx];
                    std::size_t ox_lo, ox_hi;
                    valid_range(kx, g.s, g.p, g.w, g.ow, ox_lo, ox_hi);
                    double dw = 0.0;
                    if (ox_lo >= ox_hi) continue;
                    const std::size_t ix0 = ox_lo * g.s + kx - g.p;
                    const std::size_t n = ox_hi - ox_lo;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t base = (oy * g.s + ky - g.p) * g.w + ix0;
                        const double* drow = dout_c + oy * g.ow + ox_lo;
                        double* dinrow = din_c + base;
                        const double* inrow = in_c + base;
                        for (std::size_t t = 0; t < n; ++t) {
                            dinrow[t * g.s] += wv * drow[t];
                            dw += drow[t] * inrow[t * g.s];
                        }
                    }
                    if (dweight) (*dweight)[widx] += dw;
                }
            }
        }
    }
}

std::size_t channel_stride(const Shape& s) { return shape_size(s) / s[0]; }

Tensor layer_forward(const Model& model, std::size_t l, const Tensor& x) {
    const LayerSpec& spec = model.layers()[l];
    const auto& prm = model.params()[l];
    const Shape& out_shape = model.shape_at(l + 1);
    Tensor y(out_shape);
    switch (spec.kind) {
        case LayerKind::Dense: {
            const Tensor& w = prm[0];
            for (std::size_t o = 0; o < spec.out; ++o) y[o] = prm[1][o] + fast_dot(w.data() + o * spec.in, x.data(), spec.in);
            break;
        }
        case LayerKind::Conv2d:
            conv_forward(conv_geom(spec, x.shape(), out_shape), prm[0], prm[1], x.data(), y.data());
            break;
        case LayerKind::Rectifier:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case LayerKind::Softplus:
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_softplus(x[i], spec.beta);
            break;
        case LayerKind::Flatten:
            y.raw() = x.raw();
            break;
        case LayerKind::BatchNorm: {
            const std::size_t stride = channel_stride(x.shape());
            for (std::size_t c = 0; c < spec.channels; ++c) {
                const double scale = prm[0][c] / std::sqrt(prm[3][c] + kBatchNormEps);
                const double shift = prm[1][c] - prm[2][c] * scale;
                for (std::size_t i = c * stride; i < (c + 1) * stride; ++i) y[i] = x[i] * scale + shift;
            }
            break;
        }
    }
    return y;
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Rectifier: return "rectifier";
        case LayerKind::Softplus: return "softplus";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::BatchNorm: return "batchnorm";
    }
    return "?";
}

std::string to_string(ActivationMode mode) { return mode == ActivationMode::Softplus ? "softplus" : "rectifier"; }
std::string to_string(LossKind kind) { return kind == LossKind::Mse ? "mse" : "sce"; }

ActivationMode parse_activation_mode(const std::string& text) {
    if (text == "rectifier" || text == "relu") return ActivationMode::Rectifier;
    if (text == "softplus") return ActivationMode::Softplus;
    throw usage_error("unknown activation mode '" + text + "'");
}

LossKind parse_loss_kind(const std::string& text) {
    if (text == "sce") return LossKind::Sce;
    if (text == "mse") return LossKind::Mse;
    throw usage_error("unknown loss kind '" + text + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
}

LayerSpec LayerSpec::rectifier() {
    LayerSpec s;
    s.kind = LayerKind::Rectifier;
    return s;
}

LayerSpec LayerSpec::softplus(double beta) {
    if (!(beta > 0.0)) throw usage_error("softplus beta must be positive");
    LayerSpec s;
    s.kind = LayerKind::Softplus;
    s.beta = beta;
    return s;
}

LayerSpec LayerSpec::flatten() { return {}; }

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.channels = channels;
    return s;
}

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), num_classes_(num_classes) {
    if (shape_size(input_shape_) == 0) throw data_error("model input shape must be non-empty");
    shapes_.push_back(input_shape_);
    for (std::size_t l = 0; l < layers_.size(); ++l) shapes_.push_back(output_shape(l, layers_[l], shapes_.back()));
    if (shapes_.back().size() != 1 || shapes_.back()[0] != num_classes_)
        throw data_error("model output shape " + shape_string(shapes_.back()) + " does not match " +
                         std::to_string(num_classes_) + " classes");
    for (const auto& spec : layers_) {
        std::vector<Tensor> p;
        switch (spec.kind) {
            case LayerKind::Dense:
                p = {Tensor({spec.out, spec.in}), Tensor({spec.out})};
                break;
            case LayerKind::Conv2d:
                p = {Tensor({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel}), Tensor({spec.out_ch})};
                break;
            case LayerKind::BatchNorm:
                p = {Tensor({spec.channels}, 1.0), Tensor({spec.channels}), Tensor({spec.channels}),
                     Tensor({spec.channels}, 1.0)};
                break;
            default:
                break;
        }
        params_.push_back(std::move(p));
    }
}

ActivationMode Model::activation_mode() const {
    for (const auto& s : layers_)
        if (s.kind == LayerKind::Softplus) return ActivationMode::Softplus;
    return ActivationMode::Rectifier;
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < layers_.size(); ++l)
        for (std::size_t i = 0; i < params_[l].size(); ++i)
            names.push_back(std::to_string(l) + "." + param_name(layers_[l].kind, i));
    return names;
}

Tensor& Model::parameter(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const Model&>(*this).parameter(name));
}

const Tensor& Model::parameter(const std::string& name) const {
    for (std::size_t l = 0; l < layers_.size(); ++l)
        for (std::size_t i = 0; i < params_[l].size(); ++i)
            if (name == std::to_string(l) + "." + param_name(layers_[l].kind, i)) return params_[l][i];
    throw usage_error("model has no parameter '" + name + "'");
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& lp : params_)
        for (const auto& t : lp) n += t.size();
    return n;
}

void Model::init_parameters(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& spec = layers_[l];
        if (spec.kind != LayerKind::Dense && spec.kind != LayerKind::Conv2d) continue;
        const std::size_t fan_in = spec.kind == LayerKind::Dense ? spec.in : spec.in_ch * spec.kernel * spec.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : params_[l][0].values()) v = dist(rng);
        for (auto& v : params_[l][1].values()) v = dist(rng);
    }
}

Model make_cnn(const Shape& image_shape, std::size_t num_classes, std::size_t hidden) {
    if (image_shape.size() != 3) throw usage_error("cnn expects a [channels,H,W] input shape");
    std::vector<LayerSpec> layers{LayerSpec::conv2d(image_shape[0], 16, 5, 2, 2), LayerSpec::rectifier(),
                                  LayerSpec::conv2d(16, 32, 3, 2, 1), LayerSpec::rectifier(), LayerSpec::flatten()};
    const std::size_t h1 = (image_shape[1] + 4 - 5) / 2 + 1, w1 = (image_shape[2] + 4 - 5) / 2 + 1;
    const std::size_t h2 = (h1 + 2 - 3) / 2 + 1, w2 = (w1 + 2 - 3) / 2 + 1;
    layers.push_back(LayerSpec::dense(32 * h2 * w2, hidden));
    layers.push_back(LayerSpec::rectifier());
    layers.push_back(LayerSpec::dense(hidden, num_classes));
    return Model(image_shape, std::move(layers), num_classes);
}

Model make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t num_classes) {
    std::vector<LayerSpec> layers;
    std::size_t prev = input_dim;
    for (auto h : hidden) {
        layers.push_back(LayerSpec::dense(prev, h));
        layers.push_back(LayerSpec::rectifier());
        prev = h;
    }
    layers.push_back(LayerSpec::dense(prev, num_classes));
    return Model({input_dim}, std::move(layers), num_classes);
}

ForwardTrace forward_trace(const Model& model, const Tensor& x) {
    if (x.shape() != model.input_shape()) {
        // Accept flat inputs of matching size.
        if (x.size() != shape_size(model.input_shape()))
            throw data_error("input shape " + shape_string(x.shape()) + " does not match model input " +
                             shape_string(model.input_shape()));
    }
    ForwardTrace trace;
    trace.acts.reserve(model.layers().size() + 1);
    trace.acts.push_back(x.shape() == model.input_shape() ? x : x.reshaped(model.input_shape()));
    for (std::size_t l = 0; l < model.layers().size(); ++l) trace.acts.push_back(layer_forward(model, l, trace.acts[l]));
    return trace;
}

Tensor forward(const Model& model, const Tensor& x) { return forward_trace(model, x).acts.back(); }

std::size_t predict(const Model& model, const Tensor& x) { return argmax(forward(model, x).values()); }

LayerParams zero_like(const LayerParams& params) {
    LayerParams z;
    for (const auto& lp : params) {
        std::vector<Tensor> v;
        for (const auto& t : lp) v.emplace_back(t.shape());
        z.push_back(std::move(v));
    }
    return z;
}

Tensor backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits, LayerParams* param_grads) {
    Tensor grad = grad_logits;
    for (std::size_t l = model.layers().size(); l-- > 0;) {
        const LayerSpec& spec = model.layers()[l];
        const auto& prm = model.params()[l];
        const Tensor& x = trace.acts[l];
        Tensor dx(x.shape());
        switch (spec.kind) {
            case LayerKind::Dense: {
                const Tensor& w = prm[0];
                for (std::size_t o = 0; o < spec.out; ++o) {
                    const double g = grad[o];
                    if (g == 0.0) continue;
                    const double* wr = w.data() + o * spec.in;
                    for (std::size_t i = 0; i < spec.in; ++i) dx[i] += g * wr[i];
                }
                if (param_grads) {
                    auto& gw = (*param_grads)[l][0];
                    auto& gb = (*param_grads)[l][1];
                    for (std::size_t o = 0; o < spec.out; ++o) {
                        const double g = grad[o];
                        gb[o] += g;
                        double* gr = gw.data() + o * spec.in;
                        for (std::size_t i = 0; i < spec.in; ++i) gr[i] += g * x[i];
                    }
                }
                break;
            }
            case LayerKind::Conv2d: {
                Tensor* gw = param_grads ? &(*param_grads)[l][0] : nullptr;
                Tensor* gb = param_grads ? &(*param_grads)[l][1] : nullptr;
                conv_backward(conv_geom(spec, x.shape(), model.shape_at(l + 1)), prm[0], x.data(), grad.data(),
                              dx.data(), gw, gb);
                break;
            }
            case LayerKind::Rectifier:
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? grad[i] : 0.0;
                break;
            case LayerKind::Softplus:
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] = grad[i] * sigmoid(spec.beta * x[i]);
                break;
            case LayerKind::Flatten:
                dx.raw() = grad.raw();
                break;
            case LayerKind::BatchNorm: {
                const std::size_t stride = channel_stride(x.shape());
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    const double inv_std = 1.0 / std::sqrt(prm[3][c] + kBatchNormEps);
                    const double scale = prm[0][c] * inv_std;
                    double dgamma = 0.0, dbeta = 0.0;
                    for (std::size_t i = c * stride; i < (c + 1) * stride; ++i) {
                        dx[i] = grad[i] * scale;
                        dgamma += grad[i] * (x[i] - prm[2][c]) * inv_std;
                        dbeta += grad[i];
                    }
                    if (param_grads) {
                        (*param_grads)[l][0][c] += dgamma;
                        (*param_grads)[l][1][c] += dbeta;
                    }
                }
                break;
            }
        }
        grad = std::move(dx);
    }
    return grad;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    const double lse = m + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto p = log_softmax(logits);
    for (auto& v : p) v = std::exp(v);
    return p;
}

double loss(std::span<const double> logits, std::size_t target, LossKind kind) {
    if (target >= logits.size())
        throw usage_error("target class " + std::to_string(target) + " out of range for " +
                          std::to_string(logits.size()) + " classes");
    if (kind == LossKind::Sce) return -log_softmax(logits)[target];
    const auto p = softmax(logits);
    double s = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double d = p[j] - (j == target ? 1.0 : 0.0);
        s += d * d;
    }
    return s / static_cast<double>(p.size());
}

Tensor loss_gradient(std::span<const double> logits, std::size_t target, LossKind kind) {
    if (target >= logits.size())
        throw usage_error("target class " + std::to_string(target) + " out of range for " +
                          std::to_string(logits.size()) + " classes");
    const auto p = softmax(logits);
    const std::size_t c = p.size();
    Tensor g({c});
    if (kind == LossKind::Sce) {
        // p_t - 1 computed as -(sum of the other probabilities) to keep precision
        // when the target probability rounds to one.
        double rest = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (j != target) {
                g[j] = p[j];
                rest += p[j];
            }
        g[target] = -rest;
        return g;
    }
    std::vector<double> dp(c);
    double rest = 0.0;
    for (std::size_t j = 0; j < c; ++j)
        if (j != target) rest += p[j];
    for (std::size_t j = 0; j < c; ++j) dp[j] = 2.0 * (j == target ? -rest : p[j]) / static_cast<double>(c);
    const double mean = dot(p, dp);
    for (std::size_t j = 0; j < c; ++j) g[j] = p[j] * (dp[j] - mean);
    return g;
}

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t class_index, LossKind kind) {
    const std::size_t classes[] = {class_index};
    return std::move(input_gradients(model, x, classes, kind)[0]);
}

std::vector<Tensor> input_gradients(const Model& model, const Tensor& x, std::span<const std::size_t> classes,
                                    LossKind kind, Tensor* logits_out) {
    const ForwardTrace trace = forward_trace(model, x);
    std::vector<Tensor> grads;
    grads.reserve(classes.size());
    for (std::size_t cls : classes) {
        Tensor g = backward(model, trace, loss_gradient(trace.logits().values(), cls, kind));
        grads.push_back(g.reshaped(x.shape()));
    }
    if (logits_out) *logits_out = trace.logits();
    return grads;
}

double parameter_gradient(const Model& model, const Tensor& x, std::size_t target, LossKind kind, LayerParams& grads) {
    const ForwardTrace trace = forward_trace(model, x);
    backward(model, trace, loss_gradient(trace.logits().values(), target, kind), &grads);
    return loss(trace.logits().values(), target, kind);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw usage_error("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw usage_error("momentum must lie in [0,1)");
    if (batch_size == 0) throw usage_error("batch_size must be positive");
    if (!(weight_decay >= 0.0)) throw usage_error("weight_decay must be non-negative");
    if (!(lr_drop_factor > 0.0)) throw usage_error("lr_drop_factor must be positive");
    double prev = 0.0;
    for (double p : lr_drop_points) {
        if (!(p > prev && p < 1.0)) throw usage_error("lr_drop_points must be strictly increasing within (0,1)");
        prev = p;
    }
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (double p : lr_drop_points)
        if (static_cast<double>(epoch) >= p * static_cast<double>(epochs)) lr /= lr_drop_factor;
    return lr;
}

namespace {

// Batch statistics for every batchnorm layer, computed front to back so that
// each layer sees inputs normalized by the statistics of the layers before it.
// The returned model normalizes with those statistics; the running estimates
// of `model` are updated in place.
Model with_batch_statistics(Model& model, const LabeledDataset& data, std::span<const std::size_t> batch) {
    Model working = model;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const auto& spec = model.layers()[l];
        if (spec.kind != LayerKind::BatchNorm) continue;
        const std::size_t stride = channel_stride(model.shape_at(l));
        std::vector<double> sum(spec.channels, 0.0), sq(spec.channels, 0.0);
        for (std::size_t idx : batch) {
            Tensor a = data.inputs[idx].reshaped(model.input_shape());
            for (std::size_t j = 0; j < l; ++j) a = layer_forward(working, j, a);
            for (std::size_t c = 0; c < spec.channels; ++c)
                for (std::size_t i = c * stride; i < (c + 1) * stride; ++i) {
                    sum[c] += a[i];
                    sq[c] += a[i] * a[i];
                }
        }
        const double n = static_cast<double>(batch.size() * stride);
        auto& run = model.params()[l];
        for (std::size_t c = 0; c < spec.channels; ++c) {
            const double mean = sum[c] / n;
            const double var = std::max(0.0, sq[c] / n - mean * mean);
            working.params()[l][2][c] = mean;
            working.params()[l][3][c] = var;
            const double unbiased = n > 1 ? var * n / (n - 1) : var;
            run[2][c] = (1 - kBatchNormMomentum) * run[2][c] + kBatchNormMomentum * mean;
            run[3][c] = (1 - kBatchNormMomentum) * run[3][c] + kBatchNormMomentum * unbiased;
        }
    }
    return working;
}

}  // namespace

TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    TrainResult result;
    if (cfg.epochs == 0) {
        result.model = std::move(model);
        return result;
    }
    if (data.empty()) throw data_error("training dataset is empty");
    data.validate(model.num_classes());
    for (int y : data.labels)
        if (y < 0) throw data_error("training data contains unlabeled samples");

    const bool has_bn = std::any_of(model.layers().begin(), model.layers().end(),
                                    [](const LayerSpec& s) { return s.kind == LayerKind::BatchNorm; });
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    LayerParams velocity = zero_like(model.params());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> batch(order.data() + start, end - start);
            const Model working = has_bn ? with_batch_statistics(model, data, batch) : Model{};
            const Model& active = has_bn ? working : model;

            LayerParams grads = zero_like(model.params());
            double batch_loss = 0.0;
            for (std::size_t idx : batch) {
                const auto y = static_cast<std::size_t>(data.labels[idx]);
                Tensor shifted;
                if (cfg.max_shift > 0) {
                    const auto m = static_cast<long>(cfg.max_shift);
                    std::uniform_int_distribution<long> off(-m, m);
                    const long dy = off(rng);
                    const long dx = off(rng);
                    shifted = shift_image(data.inputs[idx], dy, dx, data.domain_lo);
                }
                const ForwardTrace trace = forward_trace(active, cfg.max_shift > 0 ? shifted : data.inputs[idx]);
                if (argmax(trace.logits().values()) == y) ++correct;
                batch_loss += loss(trace.logits().values(), y, LossKind::Sce);
                backward(active, trace, loss_gradient(trace.logits().values(), y, LossKind::Sce), &grads);
            }
            if (!std::isfinite(batch_loss))
                throw numerical_error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index));
            loss_sum += batch_loss;

            const double inv_n = 1.0 / static_cast<double>(batch.size());
            for (std::size_t l = 0; l < model.layers().size(); ++l) {
                for (std::size_t i = 0; i < model.params()[l].size(); ++i) {
                    if (!is_trainable(model.layers()[l].kind, i)) continue;
                    auto p = model.params()[l][i].values();
                    auto v = velocity[l][i].values();
                    auto g = grads[l][i].values();
                    const bool decay = cfg.weight_decay > 0.0 && i == 0 && model.layers()[l].kind != LayerKind::BatchNorm;
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        const double gj = g[j] * inv_n + (decay ? cfg.weight_decay * p[j] : 0.0);
                        v[j] = cfg.momentum * v[j] + gj;
                        p[j] -= lr * (gj + cfg.momentum * v[j]);
                    }
                }
            }
        }
        EpochStats stats{epoch, lr, loss_sum / static_cast<double>(data.size()),
                         static_cast<double>(correct) / static_cast<double>(data.size())};
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    result.model = std::move(model);
    return result;
}

Tensor shift_image(const Tensor& image, long dy, long dx, double fill) {
    const Shape& sh = image.shape();
    if (sh.size() != 2 && sh.size() != 3) throw usage_error("shift_image expects [H,W] or [C,H,W], got " + shape_string(sh));
    const std::size_t c = sh.size() == 3 ? sh[0] : 1;
    const auto h = static_cast<long>(sh[sh.size() - 2]);
    const auto w = static_cast<long>(sh[sh.size() - 1]);
    Tensor out(sh, fill);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = ch * static_cast<std::size_t>(h * w);
        for (long y = 0; y < h; ++y) {
            const long sy = y - dy;
            if (sy < 0 || sy >= h) continue;
            for (long x = 0; x < w; ++x) {
                const long sx = x - dx;
                if (sx < 0 || sx >= w) continue;
                out[base + static_cast<std::size_t>(y * w + x)] = image[base + static_cast<std::size_t>(sy * w + sx)];
            }
        }
    }
    return out;
}

double accuracy(const Model& model, const LabeledDataset& data) {
    if (data.empty()) return 0.0;
    std::vector<char> hit(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        hit[i] = static_cast<int>(predict(model, data.inputs[i])) == data.labels[i];
    });
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(data.size());
}

Model swap_activations(const Model& model, ActivationMode mode, double beta) {
    std::vector<LayerSpec> layers = model.layers();
    for (auto& spec : layers) {
        if (!spec.is_activation()) continue;
        spec = mode == ActivationMode::Softplus ? LayerSpec::softplus(beta) : LayerSpec::rectifier();
    }
    Model swapped(model.input_shape(), std::move(layers), model.num_classes());
    swapped.params() = model.params();
    return swapped;
}

Container model_to_container(const Model& model) {
    Container c;
    c.kind = "model";
    c.meta["input_shape"] = model.input_shape();
    c.meta["num_classes"] = model.num_classes();
    c.meta["activation_mode"] = to_string(model.activation_mode());
    auto& layers = c.meta["layers"] = nlohmann::json::array();
    for (const auto& s : model.layers()) {
        nlohmann::json j{{"kind", to_string(s.kind)}};
        switch (s.kind) {
            case LayerKind::Dense: j["in"] = s.in; j["out"] = s.out; break;
            case LayerKind::Conv2d:
                j["in_ch"] = s.in_ch; j["out_ch"] = s.out_ch; j["kernel"] = s.kernel;
                j["stride"] = s.stride; j["pad"] = s.pad;
                break;
            case LayerKind::Softplus: j["beta"] = s.beta; break;
            case LayerKind::BatchNorm: j["channels"] = s.channels; break;
            default: break;
        }
        layers.push_back(std::move(j));
    }
    const auto names = model.parameter_names();
    std::size_t n = 0;
    for (const auto& lp : model.params())
        for (const auto& t : lp) c.add(names[n++], t);
    return c;
}

Model model_from_container(const Container& c) {
    if (c.kind != "model") throw data_error("container is not a model");
    try {
        std::vector<LayerSpec> layers;
        for (const auto& j : c.meta.at("layers")) {
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "dense") layers.push_back(LayerSpec::dense(j.at("in"), j.at("out")));
            else if (kind == "conv2d")
                layers.push_back(LayerSpec::conv2d(j.at("in_ch"), j.at("out_ch"), j.at("kernel"), j.at("stride"), j.at("pad")));
            else if (kind == "rectifier") layers.push_back(LayerSpec::rectifier());
            else if (kind == "softplus") layers.push_back(LayerSpec::softplus(j.at("beta").get<double>()));
            else if (kind == "flatten") layers.push_back(LayerSpec::flatten());
            else if (kind == "batchnorm") layers.push_back(LayerSpec::batchnorm(j.at("channels")));
            else throw data_error("unknown layer kind '" + kind + "' in model file");
        }
        Model model(c.meta.at("input_shape").get<Shape>(), std::move(layers), c.meta.at("num_classes").get<std::size_t>());
        const auto names = model.parameter_names();
        std::size_t n = 0;
        for (auto& lp : model.params())
            for (auto& t : lp) {
                const Tensor& stored = c.tensor(names[n++]);
                if (stored.shape() != t.shape())
                    throw data_error("parameter '" + names[n - 1] + "' has shape " + shape_string(stored.shape()) +
                                     ", expected " + shape_string(t.shape()));
                t = stored;
            }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("malformed model header: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const Model& model) { save_container(path, model_to_container(model)); }

Model load_model(const std::filesystem::path& path) { return model_from_container(load_container(path, "model")); }

}  // namespace gga
