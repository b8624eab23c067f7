#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eae/nn.hpp"
#include "eae/tensor.hpp"

namespace eae {

/// Labelled examples with pixel-range inputs in [0, 1].
struct Dataset {
    Tensor inputs;  // [N, sample_shape...]
    std::vector<ClassIndex> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const;
    std::size_t sample_numel() const;

    /// Checks N == labels, label range and the [0, 1] pixel contract.
    void validate() const;
};

struct Batch {
    Tensor inputs;
    std::vector<ClassIndex> labels;
    std::vector<std::size_t> indices;
};

/// Copies the selected examples, in the given order, into a fresh batch.
Batch gather(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Dataset restricted to the given examples.
Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// CIFAR-10 binary layout: per record 1 label byte + 3072 pixel bytes
// (1024 R, 1024 G, 1024 B, row-major 32x32).

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

struct CifarSubset {
    /// Classes to keep; empty keeps all ten.
    std::vector<ClassIndex> classes;
    /// Maximum examples per class; first occurrences in file order win.
    std::optional<std::size_t> per_class_cap;
};

/// Loads one or more CIFAR-10 binary batch files (concatenated in order).
Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& paths, const CifarSubset& subset = {});
Dataset load_cifar10_binary(const std::filesystem::path& path, const CifarSubset& subset = {});

/// MNIST-style IDX pair (ubyte images of rank 3, ubyte labels of rank 1).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit = std::nullopt);

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { gaussian_blobs, rings };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::gaussian_blobs;
    std::size_t num_classes = 3;
    std::size_t count = 300;
    std::size_t dim = 2;
    double noise = 0.1;
    std::uint64_t seed = 0;
    /// Optional per-sample shape (product must equal dim), e.g. {1, 8, 8}
    /// so the same data can feed cnn-small.
    Shape sample_shape;
};

std::string to_string(SyntheticKind kind);
SyntheticKind synthetic_kind_from_string(const std::string& name);

/// Balanced classes (label i mod C before shuffling), values min-max scaled
/// into [0, 1]. Same spec gives bit-identical output.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Deterministic shuffled split; returns {train, test}.
std::pair<Dataset, Dataset> split(const Dataset& dataset, std::size_t test_count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Minibatching

struct BatchPlan {
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    /// K = ceil(N / M).
    std::size_t count(std::size_t n) const;
};

/// Index lists for one epoch. The permutation is drawn from a seed derived
/// from (plan.seed, epoch); the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan, std::size_t epoch);

/// Iterable view over one epoch of minibatches.
class BatchRange {
public:
    BatchRange(const Dataset& dataset, const BatchPlan& plan, std::size_t epoch);

    class iterator {
    public:
        using value_type = Batch;
        using difference_type = std::ptrdiff_t;

        iterator(const BatchRange* range, std::size_t pos) : range_(range), pos_(pos) {}
        Batch operator*() const;
        iterator& operator++() {
            ++pos_;
            return *this;
        }
        bool operator==(const iterator& other) const { return pos_ == other.pos_; }

    private:
        const BatchRange* range_;
        std::size_t pos_;
    };

    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, order_.size()}; }
    std::size_t size() const { return order_.size(); }

private:
    const Dataset* dataset_;
    std::vector<std::vector<std::size_t>> order_;
};

inline BatchRange batches(const Dataset& dataset, const BatchPlan& plan, std::size_t epoch = 0) {
    return BatchRange(dataset, plan, epoch);
}

}  // namespace eae
