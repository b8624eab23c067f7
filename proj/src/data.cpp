#include "eae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "eae/errors.hpp"
#include "eae/random.hpp"

namespace eae {

Shape Dataset::sample_shape() const {
    const auto& s = inputs.shape();
    return Shape(s.begin() + 1, s.end());
}

std::size_t Dataset::sample_numel() const { return shape_numel(sample_shape()); }

void Dataset::validate() const {
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
        throw DimensionError("dataset has " + std::to_string(labels.size()) + " labels for inputs " +
                             shape_to_string(inputs.shape()));
    }
    for (auto y : labels) {
        if (y >= num_classes) throw ContractError("label " + std::to_string(y) + " >= num_classes");
    }
    for (double v : inputs.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset input outside [0, 1]: " + std::to_string(v));
    }
}

Batch gather(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    const std::size_t stride = dataset.sample_numel();
    const auto src = dataset.inputs.data();
    std::vector<double> values(indices.size() * stride);
    std::vector<ClassIndex> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t k = indices[i];
        if (k >= dataset.size()) throw ContractError("gather: index " + std::to_string(k) + " out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(k * stride), stride,
                    values.begin() + static_cast<std::ptrdiff_t>(i * stride));
        labels[i] = dataset.labels[k];
    }
    Shape shape = dataset.sample_shape();
    shape.insert(shape.begin(), indices.size());
    return {Tensor(std::move(shape), std::move(values)), std::move(labels), indices};
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    auto b = gather(dataset, indices);
    return {std::move(b.inputs), std::move(b.labels), dataset.num_classes};
}

// ---------------------------------------------------------------------------
// CIFAR-10

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths, const CifarSubset& filter) {
    constexpr std::size_t pixels = 3 * kCifarSide * kCifarSide;
    std::vector<double> values;
    std::vector<ClassIndex> labels;
    std::vector<std::size_t> per_class(10, 0);

    for (const auto& path : paths) {
        const auto bytes = read_bytes(path);
        if (bytes.size() % kCifarRecordBytes != 0) {
            throw FormatError("truncated CIFAR-10 file " + path.string() + ": " + std::to_string(bytes.size()) +
                                  " bytes is not a multiple of 3073",
                              bytes.size() - bytes.size() % kCifarRecordBytes);
        }
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
            const ClassIndex label = bytes[off];
            if (label >= 10) throw FormatError("CIFAR-10 label byte " + std::to_string(label) + " out of range", off);
            if (!filter.classes.empty() &&
                std::find(filter.classes.begin(), filter.classes.end(), label) == filter.classes.end()) {
                continue;
            }
            if (filter.per_class_cap && per_class[label] >= *filter.per_class_cap) continue;
            ++per_class[label];
            labels.push_back(label);
            for (std::size_t p = 0; p < pixels; ++p) values.push_back(bytes[off + 1 + p] / 255.0);
        }
    }
    if (labels.empty()) throw ContractError("CIFAR-10 subset selected no examples");
    const std::size_t n = labels.size();
    return {Tensor({n, 3, kCifarSide, kCifarSide}, std::move(values)), std::move(labels), 10};
}

Dataset load_cifar10_binary(const std::filesystem::path& path, const CifarSubset& filter) {
    return load_cifar10_binary(std::vector<std::filesystem::path>{path}, filter);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    if (off + 4 > b.size()) throw FormatError("IDX header truncated", off);
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit) {
    const auto img = read_bytes(images);
    const auto lab = read_bytes(labels);
    if (read_be32(img, 0) != 0x00000803) throw FormatError("bad IDX image magic in " + images.string(), 0);
    if (read_be32(lab, 0) != 0x00000801) throw FormatError("bad IDX label magic in " + labels.string(), 0);
    std::size_t n = read_be32(img, 4);
    const std::size_t rows = read_be32(img, 8);
    const std::size_t cols = read_be32(img, 12);
    if (read_be32(lab, 4) != n) throw FormatError("IDX image/label count mismatch", 4);
    if (img.size() < 16 + n * rows * cols) throw FormatError("IDX image payload truncated", img.size());
    if (lab.size() < 8 + n) throw FormatError("IDX label payload truncated", lab.size());
    if (limit) n = std::min(n, *limit);

    std::vector<double> values(n * rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img[16 + i] / 255.0;
    std::vector<ClassIndex> ys(n);
    ClassIndex max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ys[i] = lab[8 + i];
        max_label = std::max(max_label, ys[i]);
    }
    return {Tensor({n, 1, rows, cols}, std::move(values)), std::move(ys), std::max<std::size_t>(max_label + 1, 2)};
}

// ---------------------------------------------------------------------------
// Synthetic

std::string to_string(SyntheticKind kind) {
    return kind == SyntheticKind::gaussian_blobs ? "gaussian-blobs" : "rings";
}

SyntheticKind synthetic_kind_from_string(const std::string& name) {
    if (name == "gaussian-blobs" || name == "blobs") return SyntheticKind::gaussian_blobs;
    if (name == "rings") return SyntheticKind::rings;
    throw ContractError("unknown synthetic kind '" + name + "' (expected gaussian-blobs or rings)");
}

Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ContractError("synthetic data needs C >= 2");
    if (spec.count < spec.num_classes) throw ContractError("synthetic data needs N >= C");
    if (spec.dim == 0) throw ContractError("synthetic data needs dim >= 1");
    if (spec.kind == SyntheticKind::rings && spec.dim < 2) throw ContractError("rings need dim >= 2");
    if (!spec.sample_shape.empty() && shape_numel(spec.sample_shape) != spec.dim) {
        throw DimensionError("sample_shape " + shape_to_string(spec.sample_shape) + " does not hold dim " +
                             std::to_string(spec.dim));
    }

    Rng rng(spec.seed);
    const std::size_t n = spec.count, d = spec.dim, c = spec.num_classes;

    std::vector<double> centers(c * d);
    for (auto& v : centers) v = rng.uniform(-1.0, 1.0);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<double> values(n * d);
    std::vector<ClassIndex> labels(n);
    for (std::size_t slot = 0; slot < n; ++slot) {
        const ClassIndex y = order[slot] % c;
        labels[slot] = y;
        double* x = values.data() + slot * d;
        if (spec.kind == SyntheticKind::gaussian_blobs) {
            for (std::size_t k = 0; k < d; ++k) x[k] = centers[y * d + k] + spec.noise * rng.normal();
        } else {
            const double radius = static_cast<double>(y + 1);
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            x[0] = radius * std::cos(theta) + spec.noise * rng.normal();
            x[1] = radius * std::sin(theta) + spec.noise * rng.normal();
            for (std::size_t k = 2; k < d; ++k) x[k] = spec.noise * rng.normal();
        }
    }

    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo, range = *hi - *lo;
    for (auto& v : values) v = range > 0.0 ? (v - min) / range : 0.5;

    Shape shape = spec.sample_shape.empty() ? Shape{d} : spec.sample_shape;
    shape.insert(shape.begin(), n);
    return {Tensor(std::move(shape), std::move(values)), std::move(labels), c};
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, std::size_t test_count, std::uint64_t seed) {
    const std::size_t n = dataset.size();
    if (test_count == 0 || test_count >= n) throw ContractError("split: test_count must be in (0, N)");
    Rng rng(seed);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(test_count));
    std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(test_count), perm.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {subset(dataset, train), subset(dataset, test)};
}

// ---------------------------------------------------------------------------
// Batching

std::size_t BatchPlan::count(std::size_t n) const {
    if (batch_size == 0) throw ContractError("batch size must be positive");
    return (n + batch_size - 1) / batch_size;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan, std::size_t epoch) {
    const std::size_t k = plan.count(n);
    Rng rng(derive_seed(plan.seed, epoch));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t b = 0; b < k; ++b) {
        const std::size_t lo = b * plan.batch_size;
        const std::size_t hi = std::min(n, lo + plan.batch_size);
        out[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

BatchRange::BatchRange(const Dataset& dataset, const BatchPlan& plan, std::size_t epoch)
    : dataset_(&dataset), order_(epoch_batches(dataset.size(), plan, epoch)) {}

Batch BatchRange::iterator::operator*() const { return gather(*range_->dataset_, range_->order_[pos_]); }

}  // namespace eae
