#pragma once

// Training loops: normal, EAE adversarial training, FGSM-AT, Fast-AT and
// PGD-AT, sharing one minibatch/SGD skeleton and uniform instrumentation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eae/attacks.hpp"
#include "eae/data.hpp"
#include "eae/nn.hpp"
#include "eae/report.hpp"

namespace eae {

enum class TrainMethod { normal, eae, fgsm_at, fast_at, pgd_at };

std::string to_string(TrainMethod method);
TrainMethod train_method_from_string(const std::string& name);

struct TrainSpec {
    TrainMethod method = TrainMethod::normal;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double clr_min = 0.0;
    double clr_max = 0.2;
    /// Required for eae, forbidden otherwise.
    std::optional<double> gamma;
    /// Required for the *-at methods, forbidden otherwise.
    std::optional<AttackSpec> attack;
    std::uint64_t seed = 0;

    /// Throws ContractError naming the offending field.
    void validate() const;
    nlohmann::ordered_json to_json() const;
};

struct Instrumentation {
    std::uint64_t forward_passes = 0;
    std::uint64_t param_backward_passes = 0;
    std::uint64_t input_grad_passes = 0;
    std::vector<double> wall_time_per_epoch;

    /// Median epoch time, first (warm-up) epoch excluded when T > 1.
    double median_epoch_seconds() const;
};

struct TrainResult {
    Model model;
    Instrumentation instrumentation;
    std::vector<EpochRecord> epochs;
    std::size_t batches_per_epoch = 0;

    /// Report with method, instrumentation, config echo and epoch log
    /// filled; accuracies are left for evaluation.
    RunReport report(const TrainSpec& spec) const;
};

/// Runs spec.epochs epochs of minibatch SGD. The learning rate follows the
/// triangular schedule over epochs * K optimizer steps. Throws NumericError
/// when the loss stops being finite.
TrainResult train(Model model, const Dataset& dataset, const TrainSpec& spec);

struct TimingRow {
    std::string method;
    double sec_per_epoch = 0.0;
    Instrumentation instrumentation;
    std::size_t batches_per_epoch = 0;
};

/// Trains each spec from the same preset initialization, sequentially, and
/// reports the median per-epoch wall time (warm-up epoch excluded).
std::vector<TimingRow> train_time_benchmark(const std::vector<TrainSpec>& specs, const Dataset& dataset,
                                            const std::string& preset, std::uint64_t model_seed);

}  // namespace eae
