#pragma once

// Endogenous adversarial examples: statistics of the logit gap between the
// top-2 classes, seed-example partitioning, and the closed-form minimal-L2
// logit perturbation that equalizes the top-2 logits.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eae/attacks.hpp"
#include "eae/data.hpp"
#include "eae/nn.hpp"
#include "eae/tensor.hpp"

namespace eae {

/// Gap d = z[top1] - z[top2] >= 0.
struct LogitDifference {
    ClassIndex top1 = 0;
    ClassIndex top2 = 1;
    double d = 0.0;
};

/// Minimal perturbation moving z[top1] down and z[top2] up by d/2 each.
struct LogitDelta {
    std::vector<double> delta;
    ClassIndex top1 = 0;
    ClassIndex top2 = 1;

    double norm() const;
};

/// Top-1 / top-2 of z with ties broken by lowest index. Throws for C < 2.
LogitDifference logit_difference(std::span<const double> z);

/// Closed-form minimizer of ||delta||_2 subject to z_y + delta_y <= z_s + delta_s,
/// where y and s are the predicted top-1 and top-2 classes.
LogitDelta eae_delta(std::span<const double> z);

/// Rows with d < gamma receive z + delta*(z); the rest pass through. The
/// delta enters the tape as a constant, so gradients reach the parameters
/// through z only. Performs no input-gradient passes. Throws on NaN gamma.
Tensor eae_perturb_batch(const Tensor& z, double gamma);

/// Row mask of which rows eae_perturb_batch would perturb.
std::vector<bool> eae_gate(const Tensor& z, double gamma);

struct SeedRecord {
    std::size_t index = 0;
    double ld = 0.0;
};

/// Correctly classified examples split by whether an attack flips them.
struct SeedPartition {
    std::vector<SeedRecord> seeds;      // attack succeeded
    std::vector<SeedRecord> non_seeds;  // attack failed
    AttackSpec attack;
    double epsilon = 0.0;
    std::size_t evaluated = 0;  // examples scanned, candidates or not
    bool empty_candidates = false;

    std::size_t candidate_count() const { return seeds.size() + non_seeds.size(); }
    std::vector<double> seed_lds() const;
    std::vector<double> non_seed_lds() const;
};

/// Attacks every correctly classified example once with `attack` and records
/// its clean-logit LD. An empty candidate set yields an empty partition with
/// empty_candidates set.
SeedPartition partition_seeds(const Model& model, const Dataset& dataset, const AttackSpec& attack,
                              std::size_t chunk = 256);

struct HistogramBin {
    double lower = 0.0;
    std::size_t count = 0;
};

struct LdStats {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
    std::size_t count = 0;
    double bin_width = 0.5;
    std::vector<HistogramBin> histogram;
};

/// Throws ContractError on an empty list or non-positive bin width.
LdStats ld_stats(std::span<const double> values, double bin_width = 0.5);

/// Mean LD over the seed set. Throws ContractError when the seed set is empty.
double threshold_from_partition(const SeedPartition& partition);

/// Rule-of-thumb threshold used when no partition is available.
inline constexpr double kDefaultGamma = 3.0;

nlohmann::ordered_json to_json(const LdStats& stats);
nlohmann::ordered_json to_json(const SeedPartition& partition, bool include_records = false);

/// Long-format histogram table: set,bin_lower,count.
std::string ld_histogram_csv(const LdStats& seeds, const LdStats& non_seeds);

}  // namespace eae
