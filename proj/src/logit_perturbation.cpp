#include "eae/logit_perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "eae/errors.hpp"
#include "eae/random.hpp"

namespace eae {

double LogitDelta::norm() const {
    double s = 0.0;
    for (double v : delta) s += v * v;
    return std::sqrt(s);
}

LogitDifference logit_difference(std::span<const double> z) {
    if (z.size() < 2) throw ContractError("logit_difference needs at least 2 classes");
    ClassIndex top1 = 0;
    for (ClassIndex j = 1; j < z.size(); ++j) {
        if (z[j] > z[top1]) top1 = j;
    }
    ClassIndex top2 = top1 == 0 ? 1 : 0;
    for (ClassIndex j = 0; j < z.size(); ++j) {
        if (j != top1 && z[j] > z[top2]) top2 = j;
    }
    return {top1, top2, z[top1] - z[top2]};
}

LogitDelta eae_delta(std::span<const double> z) {
    const auto ld = logit_difference(z);
    LogitDelta out{std::vector<double>(z.size(), 0.0), ld.top1, ld.top2};
    const double half = ld.d / 2.0;
    out.delta[ld.top1] = -half;
    out.delta[ld.top2] = half;
    return out;
}

std::vector<bool> eae_gate(const Tensor& z, double gamma) {
    if (std::isnan(gamma)) throw ContractError("eae threshold gamma is NaN");
    if (z.rank() != 2) throw DimensionError("eae_gate: expected logits [batch, C], got " + shape_to_string(z.shape()));
    const std::size_t m = z.dim(0), c = z.dim(1);
    std::vector<bool> gate(m);
    for (std::size_t i = 0; i < m; ++i) gate[i] = logit_difference(z.data().subspan(i * c, c)).d < gamma;
    return gate;
}

Tensor eae_perturb_batch(const Tensor& z, double gamma) {
    const auto gate = eae_gate(z, gamma);
    if (std::none_of(gate.begin(), gate.end(), [](bool g) { return g; })) return z;

    const std::size_t m = z.dim(0), c = z.dim(1);
    std::vector<double> delta(m * c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (!gate[i]) continue;
        const auto row = eae_delta(z.data().subspan(i * c, c));
        std::copy(row.delta.begin(), row.delta.end(), delta.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return add(z, Tensor(z.shape(), std::move(delta)));
}

std::vector<double> SeedPartition::seed_lds() const {
    std::vector<double> out;
    out.reserve(seeds.size());
    for (const auto& r : seeds) out.push_back(r.ld);
    return out;
}

std::vector<double> SeedPartition::non_seed_lds() const {
    std::vector<double> out;
    out.reserve(non_seeds.size());
    for (const auto& r : non_seeds) out.push_back(r.ld);
    return out;
}

SeedPartition partition_seeds(const Model& model, const Dataset& dataset, const AttackSpec& attack_spec,
                              std::size_t chunk) {
    attack_spec.validate();
    if (chunk == 0) throw ContractError("partition_seeds: chunk must be positive");
    SeedPartition part;
    part.attack = attack_spec;
    part.epsilon = attack_spec.epsilon;
    part.evaluated = dataset.size();

    const std::size_t c = model.num_classes();
    for (std::size_t lo = 0, block = 0; lo < dataset.size(); lo += chunk, ++block) {
        const std::size_t hi = std::min(dataset.size(), lo + chunk);
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const auto batch = gather(dataset, idx);
        const Tensor z = forward_logits(model, batch.inputs);
        const auto pred = argmax_rows(z);

        std::vector<std::size_t> candidates;
        std::vector<double> lds;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (pred[i] != batch.labels[i]) continue;
            candidates.push_back(idx[i]);
            lds.push_back(logit_difference(z.data().subspan(i * c, c)).d);
        }
        if (candidates.empty()) continue;

        const auto cand = gather(dataset, candidates);
        AttackSpec spec = attack_spec;
        spec.seed = derive_seed(attack_spec.seed, block);
        const auto result = attack(model, cand.inputs, cand.labels, spec);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            SeedRecord rec{candidates[i], lds[i]};
            (result.success_mask[i] ? part.seeds : part.non_seeds).push_back(rec);
        }
    }
    part.empty_candidates = part.candidate_count() == 0;
    return part;
}

LdStats ld_stats(std::span<const double> values, double bin_width) {
    if (values.empty()) throw ContractError("ld_stats of an empty list");
    if (!(bin_width > 0.0)) throw ContractError("ld_stats bin width must be positive");
    LdStats s;
    s.count = values.size();
    s.bin_width = bin_width;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / n);

    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double first = std::floor(*lo / bin_width) * bin_width;
    const auto bins = static_cast<std::size_t>(std::floor((*hi - first) / bin_width)) + 1;
    s.histogram.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) s.histogram[b].lower = first + static_cast<double>(b) * bin_width;
    for (double v : values) {
        auto b = static_cast<std::size_t>(std::floor((v - first) / bin_width));
        s.histogram[std::min(b, bins - 1)].count++;
    }
    return s;
}

double threshold_from_partition(const SeedPartition& partition) {
    if (partition.seeds.empty()) {
        throw ContractError(
            "seed set is empty: no candidate was flipped by the attack; raise epsilon or fall back to a "
            "threshold in [2, 4]");
    }
    const auto lds = partition.seed_lds();
    return std::accumulate(lds.begin(), lds.end(), 0.0) / static_cast<double>(lds.size());
}

nlohmann::ordered_json to_json(const LdStats& stats) {
    nlohmann::ordered_json j;
    j["mean"] = stats.mean;
    j["std"] = stats.stddev;
    j["count"] = stats.count;
    j["bin_width"] = stats.bin_width;
    auto hist = nlohmann::ordered_json::array();
    for (const auto& b : stats.histogram) hist.push_back({b.lower, b.count});
    j["histogram"] = std::move(hist);
    return j;
}

nlohmann::ordered_json to_json(const SeedPartition& p, bool include_records) {
    nlohmann::ordered_json j;
    j["attack"] = p.attack.label();
    j["epsilon"] = p.epsilon;
    j["evaluated"] = p.evaluated;
    j["candidates"] = p.candidate_count();
    j["seed_count"] = p.seeds.size();
    j["non_seed_count"] = p.non_seeds.size();
    j["empty_candidates"] = p.empty_candidates;
    j["empty_seed_set"] = p.seeds.empty();
    if (!p.seeds.empty()) {
        j["mld_seed"] = ld_stats(p.seed_lds()).mean;
        j["gamma"] = threshold_from_partition(p);
    } else {
        j["mld_seed"] = nullptr;
        j["gamma"] = nullptr;
    }
    j["mld_non_seed"] = p.non_seeds.empty() ? nlohmann::ordered_json(nullptr)
                                            : nlohmann::ordered_json(ld_stats(p.non_seed_lds()).mean);
    if (include_records) {
        auto rec = [](const std::vector<SeedRecord>& rs) {
            auto a = nlohmann::ordered_json::array();
            for (const auto& r : rs) a.push_back({r.index, r.ld});
            return a;
        };
        j["seeds"] = rec(p.seeds);
        j["non_seeds"] = rec(p.non_seeds);
    }
    return j;
}

std::string ld_histogram_csv(const LdStats& seeds, const LdStats& non_seeds) {
    std::string out = "set,bin_lower,count\n";
    char line[96];
    for (const auto& [name, stats] : {std::pair{"seed", &seeds}, std::pair{"non_seed", &non_seeds}}) {
        for (const auto& b : stats->histogram) {
            std::snprintf(line, sizeof line, "%s,%.6f,%zu\n", name, b.lower, b.count);
            out += line;
        }
    }
    return out;
}

}  // namespace eae
