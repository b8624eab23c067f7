#include "eae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "eae/errors.hpp"

namespace eae {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::maxpool2x2: return "maxpool2x2";
    }
    return "unknown";
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = rng.uniform(-bound, bound);
    Tensor t(std::move(shape), std::move(values), true);
    t.set_parameter(true);
    return t;
}

Tensor zero_parameter(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    t.set_parameter(true);
    return t;
}

Tensor copy_parameter(const Tensor& p) {
    Tensor t(p.shape(), std::vector<double>(p.data().begin(), p.data().end()), p.requires_grad());
    t.set_parameter(true);
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Layers

Dense::Dense(std::size_t in, std::size_t out, Rng& rng)
    : weight_(he_uniform({in, out}, in, rng)), bias_(zero_parameter({out})) {}

Dense::Dense(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rank() != 2 || bias_.rank() != 1 || bias_.dim(0) != weight_.dim(1)) {
        throw DimensionError("dense: weight " + shape_to_string(weight_.shape()) + " incompatible with bias " +
                             shape_to_string(bias_.shape()));
    }
    weight_.set_parameter(true);
    bias_.set_parameter(true);
}

Tensor Dense::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != weight_.dim(0)) {
        throw DimensionError("dense: expected [batch, " + std::to_string(weight_.dim(0)) + "], got " +
                             shape_to_string(x.shape()));
    }
    return add_row_bias(matmul(x, weight_), bias_);
}

Shape Dense::output_shape(const Shape& sample_shape) const {
    if (sample_shape.size() != 1 || sample_shape[0] != weight_.dim(0)) {
        throw DimensionError("dense: input sample shape " + shape_to_string(sample_shape) + " does not match " +
                             std::to_string(weight_.dim(0)) + " features");
    }
    return {weight_.dim(1)};
}

std::unique_ptr<Layer> Dense::clone() const {
    return std::make_unique<Dense>(copy_parameter(weight_), copy_parameter(bias_));
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
               std::size_t padding, Rng& rng)
    : kernel_(he_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias_(zero_parameter({out_channels})),
      stride_(stride),
      padding_(padding) {}

Conv2d::Conv2d(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding)
    : kernel_(std::move(kernel)), bias_(std::move(bias)), stride_(stride), padding_(padding) {
    if (kernel_.rank() != 4 || bias_.rank() != 1 || bias_.dim(0) != kernel_.dim(0)) {
        throw DimensionError("conv2d layer: kernel " + shape_to_string(kernel_.shape()) + " incompatible with bias " +
                             shape_to_string(bias_.shape()));
    }
    kernel_.set_parameter(true);
    bias_.set_parameter(true);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, kernel_, bias_, stride_, padding_); }

Shape Conv2d::output_shape(const Shape& s) const {
    if (s.size() != 3 || s[0] != kernel_.dim(1)) {
        throw DimensionError("conv2d layer: input sample shape " + shape_to_string(s) + " does not match " +
                             std::to_string(kernel_.dim(1)) + " channels");
    }
    auto extent = [&](std::size_t in, std::size_t k) {
        const std::size_t padded = in + 2 * padding_;
        if (padded < k || (padded - k) % stride_ != 0) {
            throw DimensionError("conv2d layer: non-integral output size for input " + shape_to_string(s));
        }
        return (padded - k) / stride_ + 1;
    };
    return {kernel_.dim(0), extent(s[1], kernel_.dim(2)), extent(s[2], kernel_.dim(3))};
}

std::unique_ptr<Layer> Conv2d::clone() const {
    return std::make_unique<Conv2d>(copy_parameter(kernel_), copy_parameter(bias_), stride_, padding_);
}

Shape MaxPool2x2::output_shape(const Shape& s) const {
    if (s.size() != 3 || s[1] < 2 || s[2] < 2) {
        throw DimensionError("maxpool2x2: input sample shape " + shape_to_string(s) + " too small");
    }
    return {s[0], s[1] / 2, s[2] / 2};
}

// ---------------------------------------------------------------------------
// Model

Model::Model(std::string preset, Shape input_shape, std::size_t num_classes,
             std::vector<std::unique_ptr<Layer>> layers)
    : preset_(std::move(preset)),
      input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      layers_(std::move(layers)) {
    if (layers_.empty()) throw ContractError("model needs at least one layer");
    Shape s = input_shape_;
    for (const auto& layer : layers_) s = layer->output_shape(s);
    if (s.size() != 1 || s[0] != num_classes_) {
        throw DimensionError("model output shape " + shape_to_string(s) + " does not match " +
                             std::to_string(num_classes_) + " classes");
    }
}

Model::Model(const Model& other)
    : preset_(other.preset_), input_shape_(other.input_shape_), num_classes_(other.num_classes_) {
    layers_.reserve(other.layers_.size());
    for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

Model& Model::operator=(const Model& other) {
    if (this != &other) {
        Model copy(other);
        *this = std::move(copy);
    }
    return *this;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> params;
    for (const auto& layer : layers_) {
        for (auto& p : layer->parameters()) params.push_back(p);
    }
    return params;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

void Model::zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
}

void Model::set_trainable(bool trainable) {
    for (auto& p : parameters()) p.set_requires_grad(trainable);
}

Model make_model(const std::string& preset, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ContractError("a classifier needs at least 2 classes");
    Rng rng(seed);
    std::vector<std::unique_ptr<Layer>> layers;
    if (preset == "mlp-small") {
        const std::size_t in = shape_numel(input_shape);
        layers.push_back(std::make_unique<Flatten>());
        layers.push_back(std::make_unique<Dense>(in, 128, rng));
        layers.push_back(std::make_unique<Relu>());
        layers.push_back(std::make_unique<Dense>(128, num_classes, rng));
    } else if (preset == "cnn-small") {
        if (input_shape.size() != 3) {
            throw DimensionError("cnn-small needs [channels, height, width] input, got " + shape_to_string(input_shape));
        }
        layers.push_back(std::make_unique<Conv2d>(input_shape[0], 16, 3, 1, 1, rng));
        layers.push_back(std::make_unique<Relu>());
        layers.push_back(std::make_unique<MaxPool2x2>());
        layers.push_back(std::make_unique<Conv2d>(16, 32, 3, 1, 1, rng));
        layers.push_back(std::make_unique<Relu>());
        layers.push_back(std::make_unique<MaxPool2x2>());
        layers.push_back(std::make_unique<Flatten>());
        const std::size_t features = 32 * (input_shape[1] / 4) * (input_shape[2] / 4);
        layers.push_back(std::make_unique<Dense>(features, num_classes, rng));
    } else {
        throw ContractError("unknown model preset '" + preset + "' (expected mlp-small or cnn-small)");
    }
    return Model(preset, input_shape, num_classes, std::move(layers));
}

Tensor forward_logits(const Model& model, const Tensor& x) {
    const auto& s = model.input_shape();
    if (x.rank() != s.size() + 1 || !std::equal(s.begin(), s.end(), x.shape().begin() + 1)) {
        throw DimensionError("model expects [batch, " + shape_to_string(s).substr(1) + ", got " +
                             shape_to_string(x.shape()));
    }
    Tensor h = x;
    for (const auto& layer : model.layers()) h = layer->forward(h);
    pass_counters().forward_passes.fetch_add(1);
    return h;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_logits(const Tensor& z) {
    if (z.rank() != 2) throw DimensionError("expected logits [batch, C], got " + shape_to_string(z.shape()));
}

}  // namespace

Tensor softmax(const Tensor& z) {
    check_logits(z);
    const std::size_t m = z.dim(0), c = z.dim(1);
    const auto zd = z.data();
    std::vector<double> out(zd.size());
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = zd.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - mx);
            total += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    return Tensor(z.shape(), std::move(out));
}

Tensor cross_entropy(const Tensor& z, const std::vector<ClassIndex>& labels) {
    check_logits(z);
    const std::size_t m = z.dim(0), c = z.dim(1);
    if (labels.size() != m) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(m));
    }
    for (auto y : labels) {
        if (y >= c) throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(c) + ")");
    }
    auto probs = std::make_shared<Tensor>(softmax(z));
    const auto zd = z.data();
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = zd.data() + i * c;
        const auto top = static_cast<std::size_t>(std::max_element(row, row + c) - row);
        // log1p keeps the tail exact when the top logit dominates
        double rest = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != top) rest += std::exp(row[j] - row[top]);
        }
        loss += (row[top] - row[labels[i]]) + std::log1p(rest);
    }
    loss /= static_cast<double>(m);
    return make_result({}, {loss}, {z},
                       [probs, labels, m, c](std::span<const double> g, std::span<std::vector<double>*> gi) {
                           if (!gi[0]) return;
                           auto& dz = *gi[0];
                           const auto p = probs->data();
                           const double s = g[0] / static_cast<double>(m);
                           for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < c; ++j) {
                                   const double onehot = (j == labels[i]) ? 1.0 : 0.0;
                                   dz[i * c + j] += s * (p[i * c + j] - onehot);
                               }
                           }
                       });
}

std::vector<ClassIndex> argmax_rows(const Tensor& z) {
    check_logits(z);
    const std::size_t m = z.dim(0), c = z.dim(1);
    const auto zd = z.data();
    std::vector<ClassIndex> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = zd.data() + i * c;
        out[i] = static_cast<ClassIndex>(std::max_element(row, row + c) - row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

void sgd_step(Model& model, double lr) {
    auto params = model.parameters();
    std::erase_if(params, [](const Tensor& p) { return !p.requires_grad(); });  // frozen
    for (const auto& p : params) {
        if (!p.has_grad()) throw ContractError("sgd_step: parameter without gradient (missing backward?)");
    }
    for (auto& p : params) {
        auto w = p.mutable_data();
        const auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        p.zero_grad();
    }
}

void CyclicLrSchedule::validate() const {
    if (!(clr_min >= 0.0) || !(clr_max > clr_min) || total_steps == 0) {
        throw ContractError("cyclic lr schedule needs 0 <= clr_min < clr_max and total_steps > 0");
    }
}

double CyclicLrSchedule::lr_at(std::size_t step) const {
    if (step > total_steps) return clr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    const double tri = 1.0 - std::abs(2.0 * t - 1.0);
    return clr_min + (clr_max - clr_min) * tri;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "eae-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string checkpoint_bytes(const Model& model) {
    nlohmann::ordered_json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["preset"] = model.preset();
    j["input_shape"] = model.input_shape();
    j["num_classes"] = model.num_classes();
    auto params = nlohmann::ordered_json::array();
    for (const auto& p : model.parameters()) {
        nlohmann::ordered_json entry;
        entry["shape"] = p.shape();
        entry["values"] = std::vector<double>(p.data().begin(), p.data().end());
        params.push_back(std::move(entry));
    }
    j["parameters"] = std::move(params);
    return j.dump() + "\n";
}

Model checkpoint_from_bytes(const std::string& bytes) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what(), e.byte);
    }
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw FormatError("not an eae checkpoint", 0);
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw FormatError("unsupported checkpoint version " + j.at("version").dump(), 0);
        }
        Model model = make_model(j.at("preset").get<std::string>(), j.at("input_shape").get<Shape>(),
                                 j.at("num_classes").get<std::size_t>(), 0);
        auto params = model.parameters();
        const auto& stored = j.at("parameters");
        if (stored.size() != params.size()) {
            throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " parameter tensors, preset has " +
                              std::to_string(params.size()), 0);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto shape = stored[i].at("shape").get<Shape>();
            const auto values = stored[i].at("values").get<std::vector<double>>();
            if (shape != params[i].shape() || values.size() != params[i].numel()) {
                throw FormatError("parameter " + std::to_string(i) + " has shape " + shape_to_string(shape) +
                                  ", expected " + shape_to_string(params[i].shape()), 0);
            }
            std::copy(values.begin(), values.end(), params[i].mutable_data().begin());
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what(), 0);
    }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << checkpoint_bytes(model);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_bytes(ss.str());
}

}  // namespace eae
