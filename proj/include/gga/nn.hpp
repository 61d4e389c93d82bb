#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gga/container.hpp"
#include "gga/dataset.hpp"
#include "gga/tensor.hpp"

namespace gga {

enum class LayerKind { Dense, Conv2d, Rectifier, Softplus, Flatten, BatchNorm };
enum class ActivationMode { Rectifier, Softplus };
enum class LossKind { Sce, Mse };

std::string to_string(LayerKind kind);
std::string to_string(ActivationMode mode);
std::string to_string(LossKind kind);
ActivationMode parse_activation_mode(const std::string& text);
LossKind parse_loss_kind(const std::string& text);

inline constexpr double kDefaultSoftplusBeta = 10.0;

struct LayerSpec {
    LayerKind kind = LayerKind::Flatten;
    // dense
    std::size_t in = 0;
    std::size_t out = 0;
    // conv2d
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    // softplus
    double beta = kDefaultSoftplusBeta;
    // batchnorm
    std::size_t channels = 0;

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t pad);
    static LayerSpec rectifier();
    static LayerSpec softplus(double beta = kDefaultSoftplusBeta);
    static LayerSpec flatten();
    static LayerSpec batchnorm(std::size_t channels);

    bool is_activation() const { return kind == LayerKind::Rectifier || kind == LayerKind::Softplus; }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-layer parameter tensors. Dense/conv: {weight, bias}; batchnorm:
/// {gamma, beta, running_mean, running_var}; activations and flatten: {}.
using LayerParams = std::vector<std::vector<Tensor>>;

/// Feed-forward classifier. Construction checks that consecutive layer shapes
/// compose and that the final layer yields num_classes logits.
class Model {
public:
    Model() = default;
    Model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes);

    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    ActivationMode activation_mode() const;

    /// Shape entering layer l; index layers().size() is the logit shape.
    const Shape& shape_at(std::size_t l) const { return shapes_[l]; }

    LayerParams& params() noexcept { return params_; }
    const LayerParams& params() const noexcept { return params_; }

    /// Names like "3.weight" or "1.running_var" in layer order.
    std::vector<std::string> parameter_names() const;
    Tensor& parameter(const std::string& name);
    const Tensor& parameter(const std::string& name) const;
    std::size_t parameter_count() const;

    /// Weights and biases uniform in +-1/sqrt(fan_in); identity batchnorm.
    void init_parameters(std::uint64_t seed);

    friend bool operator==(const Model&, const Model&) = default;

private:
    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::size_t num_classes_ = 0;
    std::vector<Shape> shapes_;
    LayerParams params_;
};

/// Two stride-2 convolutions (16, 32 filters) followed by two dense layers.
Model make_cnn(const Shape& image_shape, std::size_t num_classes, std::size_t hidden = 100);
Model make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t num_classes);

/// Activations recorded by a forward pass: acts[0] is the input, acts[l + 1]
/// the output of layer l.
struct ForwardTrace {
    std::vector<Tensor> acts;
    const Tensor& logits() const { return acts.back(); }
};

ForwardTrace forward_trace(const Model& model, const Tensor& x);
Tensor forward(const Model& model, const Tensor& x);
std::size_t predict(const Model& model, const Tensor& x);

/// Reverse pass from dL/dlogits. Returns dL/dx. When param_grads is non-null
/// the parameter gradients are accumulated into it (layout of Model::params).
Tensor backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
                LayerParams* param_grads = nullptr);

LayerParams zero_like(const LayerParams& params);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double loss(std::span<const double> logits, std::size_t target, LossKind kind);
/// dL/dlogits of loss().
Tensor loss_gradient(std::span<const double> logits, std::size_t target, LossKind kind);

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t class_index, LossKind kind = LossKind::Sce);
/// Gradients for every class from one shared forward pass.
std::vector<Tensor> input_gradients(const Model& model, const Tensor& x, std::span<const std::size_t> classes,
                                    LossKind kind = LossKind::Sce, Tensor* logits_out = nullptr);
/// Loss and parameter gradients for one labelled sample.
double parameter_gradient(const Model& model, const Tensor& x, std::size_t target, LossKind kind,
                          LayerParams& grads);

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    std::size_t epochs = 10;
    std::vector<double> lr_drop_points{0.3, 0.6, 0.8};
    double lr_drop_factor = 5.0;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
    /// Random integer translation of [C,H,W] inputs by up to this many
    /// pixels per axis; vacated pixels take the domain lower bound.
    std::size_t max_shift = 0;

    void validate() const;
    double learning_rate_at(std::size_t epoch) const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch SGD with Nesterov momentum on the cross-entropy loss.
/// Single-threaded; bit-reproducible for a fixed seed.
TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

double accuracy(const Model& model, const LabeledDataset& data);

/// Image translated by (dy, dx) pixels; accepts [H,W] or [C,H,W].
Tensor shift_image(const Tensor& image, long dy, long dx, double fill);

/// Replaces every activation layer by the requested family; parameters are
/// carried over unchanged.
Model swap_activations(const Model& model, ActivationMode mode, double beta = kDefaultSoftplusBeta);

Container model_to_container(const Model& model);
Model model_from_container(const Container& c);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace gga
