#pragma once

// Layers, models with logit access, softmax / cross-entropy, SGD and the
// triangular cyclic learning-rate schedule.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "eae/random.hpp"
#include "eae/tensor.hpp"

namespace eae {

using ClassIndex = std::size_t;

enum class LayerKind { dense, conv2d, relu, flatten, maxpool2x2 };

std::string to_string(LayerKind kind);

class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual Tensor forward(const Tensor& x) const = 0;
    /// Per-sample output shape for a per-sample input shape.
    virtual Shape output_shape(const Shape& sample_shape) const = 0;
    virtual std::vector<Tensor> parameters() const { return {}; }
    /// Deep copy; parameters get fresh storage.
    virtual std::unique_ptr<Layer> clone() const = 0;
};

/// y = x W + b with W [in, out].
class Dense final : public Layer {
public:
    Dense(std::size_t in, std::size_t out, Rng& rng);
    Dense(Tensor weight, Tensor bias);

    LayerKind kind() const override { return LayerKind::dense; }
    Tensor forward(const Tensor& x) const override;
    Shape output_shape(const Shape& sample_shape) const override;
    std::vector<Tensor> parameters() const override { return {weight_, bias_}; }
    std::unique_ptr<Layer> clone() const override;

    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    Tensor weight_;
    Tensor bias_;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
           std::size_t padding, Rng& rng);
    Conv2d(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding);

    LayerKind kind() const override { return LayerKind::conv2d; }
    Tensor forward(const Tensor& x) const override;
    Shape output_shape(const Shape& sample_shape) const override;
    std::vector<Tensor> parameters() const override { return {kernel_, bias_}; }
    std::unique_ptr<Layer> clone() const override;

private:
    Tensor kernel_;
    Tensor bias_;
    std::size_t stride_;
    std::size_t padding_;
};

class Relu final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::relu; }
    Tensor forward(const Tensor& x) const override { return relu(x); }
    Shape output_shape(const Shape& sample_shape) const override { return sample_shape; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(); }
};

class Flatten final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::flatten; }
    Tensor forward(const Tensor& x) const override { return flatten(x); }
    Shape output_shape(const Shape& sample_shape) const override { return {shape_numel(sample_shape)}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(); }
};

class MaxPool2x2 final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::maxpool2x2; }
    Tensor forward(const Tensor& x) const override { return maxpool2x2(x); }
    Shape output_shape(const Shape& sample_shape) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2x2>(); }
};

/// Ordered layer stack whose last layer emits the logits z.
/// Copying a Model deep-copies its parameters.
class Model {
public:
    Model(std::string preset, Shape input_shape, std::size_t num_classes,
          std::vector<std::unique_ptr<Layer>> layers);

    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    const std::string& preset() const { return preset_; }
    const Shape& input_shape() const { return input_shape_; }
    std::size_t num_classes() const { return num_classes_; }
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }

    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    /// Toggles requires_grad on every parameter.
    void set_trainable(bool trainable);

private:
    std::string preset_;
    Shape input_shape_;
    std::size_t num_classes_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Builds a named architecture: "mlp-small" or "cnn-small".
/// Weights use He-uniform scaling; biases start at zero.
Model make_model(const std::string& preset, const Shape& input_shape, std::size_t num_classes,
                 std::uint64_t seed);

/// Logits z for a batch [batch, input_shape...]. Counts one forward pass.
Tensor forward_logits(const Model& model, const Tensor& x);

/// Row-wise softmax with max subtraction; not recorded on the tape.
Tensor softmax(const Tensor& z);

/// Mean over the batch of -log softmax(z)[y]. Gradient w.r.t. z is
/// (softmax(z) - onehot(y)) / batch.
Tensor cross_entropy(const Tensor& z, const std::vector<ClassIndex>& labels);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<ClassIndex> argmax_rows(const Tensor& z);

/// p <- p - lr * grad(p) for every trainable parameter, then releases the
/// grads. Parameters with requires_grad off are left alone. Throws
/// ContractError when a trainable parameter has no gradient.
void sgd_step(Model& model, double lr);

/// Triangular one-cycle schedule: clr_min at 0, clr_max at the midpoint,
/// clr_min again at total_steps.
struct CyclicLrSchedule {
    double clr_min = 0.0;
    double clr_max = 0.2;
    std::size_t total_steps = 1;

    void validate() const;
    /// Steps beyond total_steps return clr_min.
    double lr_at(std::size_t step) const;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Serialized checkpoint bytes (what save_checkpoint writes).
std::string checkpoint_bytes(const Model& model);
Model checkpoint_from_bytes(const std::string& bytes);

}  // namespace eae
