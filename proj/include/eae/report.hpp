#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace eae {

struct AttackAccuracy {
    std::string attack;
    double epsilon = 0.0;
    double accuracy = 0.0;

    bool operator==(const AttackAccuracy&) const = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double seconds = 0.0;
    std::size_t perturbed_rows = 0;  // EAE gate hits during the epoch

    bool operator==(const EpochRecord&) const = default;
};

/// Outcome of one training run plus its evaluation.
struct RunReport {
    std::string method;
    double clean_acc = 0.0;
    std::vector<AttackAccuracy> perturbed;
    double sec_per_epoch = 0.0;  // median, warm-up epoch excluded
    std::uint64_t forward_passes = 0;
    std::uint64_t param_bwd = 0;
    std::uint64_t input_grad_bwd = 0;
    std::size_t epochs = 0;
    std::size_t batches_per_epoch = 0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string timing_note;
    std::vector<EpochRecord> epoch_log;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();

    bool operator==(const RunReport&) const = default;
};

nlohmann::ordered_json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::ordered_json& j);

}  // namespace eae
