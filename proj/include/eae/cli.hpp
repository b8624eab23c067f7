#pragma once

// Command-line front end. Every command reads one declarative JSON config;
// flags only pick the file and override the seed / output directory.
//
// Exit codes: 0 success, 1 I/O or unexpected failure, 2 config error,
// 3 numeric abort, 4 invariant violation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eae/attacks.hpp"
#include "eae/data.hpp"
#include "eae/train.hpp"

namespace eae::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitInvariant = 4;

/// Invalid configuration; `where` is a JSON pointer or "line N".
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& where, const std::string& what)
        : std::runtime_error(where + ": " + what), where_(where) {}
    const std::string& where() const { return where_; }

private:
    std::string where_;
};

struct DatasetConfig {
    std::string kind = "gaussian-blobs";  // gaussian-blobs | rings | cifar10 | idx
    // synthetic
    SyntheticSpec synthetic;
    std::size_t test_count = 0;
    // cifar10
    std::vector<std::filesystem::path> train_files;
    std::vector<std::filesystem::path> test_files;
    std::vector<ClassIndex> classes;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    // idx
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::optional<std::size_t> train_limit, test_limit;
};

struct SeedStatsConfig {
    std::vector<double> epsilons;
    AttackKind attack = AttackKind::fgsm;
    double bin_width = 0.5;
    std::optional<double> histogram_epsilon;
};

struct BenchConfig {
    std::vector<TrainSpec> methods;
    std::optional<std::string> source_model;
    std::size_t source_epochs = 0;  // 0: use train.epochs
};

/// Fully determines a run. Unknown keys are rejected at every level.
struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
    DatasetConfig dataset;
    std::string model = "mlp-small";
    TrainSpec train;
    std::vector<AttackSpec> attacks;  // transfer-evaluation grid
    std::optional<std::filesystem::path> checkpoint;
    std::optional<AttackSpec> attack;  // for the attack command
    std::optional<SeedStatsConfig> seed_stats;
    std::optional<BenchConfig> bench;
    nlohmann::ordered_json echo;
};

/// Parses config text. `base_dir` resolves relative file paths.
/// Throws ConfigError with a line or field location.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                       std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Returns {train, test}.
std::pair<Dataset, Dataset> load_datasets(const RunConfig& config);

struct Options {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    bool verify = false;
};

int cmd_train(const Options& options);
int cmd_seed_stats(const Options& options);
int cmd_bench(const Options& options);
int cmd_attack(const Options& options);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv);

// Perturbed-set container written by the attack command:
// "EAEPSET1", u32 version, u32 rank, u64 dims[rank], f64 epsilon,
// u32 labels[N], f64 values[prod(dims)]; little-endian.
struct PerturbedSet {
    Tensor inputs;
    std::vector<ClassIndex> labels;
    double epsilon = 0.0;
};

void save_perturbed_set(const std::filesystem::path& path, const PerturbedSet& set);
PerturbedSet load_perturbed_set(const std::filesystem::path& path);

}  // namespace eae::cli
