#include "eae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "eae/errors.hpp"
#include "eae/logit_perturbation.hpp"
#include "eae/random.hpp"

namespace eae {

std::string to_string(TrainMethod method) {
    switch (method) {
        case TrainMethod::normal: return "normal";
        case TrainMethod::eae: return "eae";
        case TrainMethod::fgsm_at: return "fgsm-at";
        case TrainMethod::fast_at: return "fast-at";
        case TrainMethod::pgd_at: return "pgd-at";
    }
    return "unknown";
}

TrainMethod train_method_from_string(const std::string& name) {
    if (name == "normal") return TrainMethod::normal;
    if (name == "eae") return TrainMethod::eae;
    if (name == "fgsm-at") return TrainMethod::fgsm_at;
    if (name == "fast-at") return TrainMethod::fast_at;
    if (name == "pgd-at") return TrainMethod::pgd_at;
    throw ContractError("unknown training method '" + name + "' (expected normal, eae, fgsm-at, fast-at or pgd-at)");
}

namespace {

bool uses_attack(TrainMethod m) {
    return m == TrainMethod::fgsm_at || m == TrainMethod::fast_at || m == TrainMethod::pgd_at;
}

AttackKind attack_for(TrainMethod m) {
    switch (m) {
        case TrainMethod::fgsm_at: return AttackKind::fgsm;
        case TrainMethod::fast_at: return AttackKind::fast_step;
        default: return AttackKind::pgd;
    }
}

}  // namespace

void TrainSpec::validate() const {
    if (epochs == 0) throw ContractError("train.epochs must be >= 1");
    if (batch_size == 0) throw ContractError("train.batch_size must be >= 1");
    CyclicLrSchedule{clr_min, clr_max, 1}.validate();
    if (method == TrainMethod::eae) {
        if (!gamma) throw ContractError("train.gamma is required for method eae");
        if (std::isnan(*gamma)) throw ContractError("train.gamma must not be NaN");
    } else if (gamma) {
        throw ContractError("train.gamma is only valid for method eae");
    }
    if (uses_attack(method)) {
        if (!attack) throw ContractError("train.attack is required for method " + to_string(method));
        if (attack->kind != attack_for(method)) {
            throw ContractError("train.attack.kind must be " + to_string(attack_for(method)) + " for method " +
                                to_string(method));
        }
        attack->validate();
    } else if (attack) {
        throw ContractError("train.attack is only valid for adversarial-training methods");
    }
}

nlohmann::ordered_json TrainSpec::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = to_string(method);
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["clr_min"] = clr_min;
    j["clr_max"] = clr_max;
    if (gamma) j["gamma"] = *gamma;
    if (attack) {
        j["attack"] = {{"kind", to_string(attack->kind)},
                       {"epsilon", attack->epsilon},
                       {"alpha", attack->alpha},
                       {"iterations", attack->iterations},
                       {"random_start", attack->random_start},
                       {"seed", attack->seed}};
    }
    j["seed"] = seed;
    return j;
}

double Instrumentation::median_epoch_seconds() const {
    if (wall_time_per_epoch.empty()) return 0.0;
    std::vector<double> t(wall_time_per_epoch.begin() + (wall_time_per_epoch.size() > 1 ? 1 : 0),
                          wall_time_per_epoch.end());
    std::sort(t.begin(), t.end());
    const std::size_t n = t.size();
    return n % 2 ? t[n / 2] : 0.5 * (t[n / 2 - 1] + t[n / 2]);
}

RunReport TrainResult::report(const TrainSpec& spec) const {
    RunReport r;
    r.method = to_string(spec.method);
    r.sec_per_epoch = instrumentation.median_epoch_seconds();
    r.forward_passes = instrumentation.forward_passes;
    r.param_bwd = instrumentation.param_backward_passes;
    r.input_grad_bwd = instrumentation.input_grad_passes;
    r.epochs = spec.epochs;
    r.batches_per_epoch = batches_per_epoch;
    r.seed = spec.seed;
    r.threads = 1;
    r.timing_note =
        "sec_per_epoch is per-epoch compute time (attack generation + training), excluding dataset loading and the "
        "warm-up epoch";
    r.epoch_log = epochs;
    r.config = spec.to_json();
    return r;
}

TrainResult train(Model model, const Dataset& dataset, const TrainSpec& spec) {
    spec.validate();
    if (dataset.size() == 0) throw ContractError("train: empty dataset");
    if (dataset.num_classes != model.num_classes()) {
        throw ContractError("train: dataset has " + std::to_string(dataset.num_classes) + " classes, model " +
                            std::to_string(model.num_classes()));
    }

    const BatchPlan plan{spec.batch_size, derive_seed(spec.seed, 1)};
    const std::size_t k = plan.count(dataset.size());
    const CyclicLrSchedule schedule{spec.clr_min, spec.clr_max, spec.epochs * k};
    const std::uint64_t attack_stream = derive_seed(spec.seed, 2);

    TrainResult result{std::move(model), {}, {}, k};
    Model& net = result.model;
    net.zero_grad();
    const auto before = snapshot_passes();
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, gated = 0;

        for (const auto& indices : epoch_batches(dataset.size(), plan, epoch)) {
            const auto batch = gather(dataset, indices);
            Tensor x = batch.inputs;
            if (spec.attack) {
                AttackSpec a = *spec.attack;
                a.seed = derive_seed(attack_stream ^ spec.attack->seed, step);
                x = perturb(net, x, batch.labels, a);
            }

            GradTape tape;
            Tensor z = forward_logits(net, x);
            const auto pred = argmax_rows(z);
            if (spec.method == TrainMethod::eae) {
                const auto gate = eae_gate(z, *spec.gamma);
                gated += static_cast<std::size_t>(std::count(gate.begin(), gate.end(), true));
                z = eae_perturb_batch(z, *spec.gamma);
            }
            const Tensor loss = cross_entropy(z, batch.labels);
            if (!std::isfinite(loss.item())) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + " (learning rate too high?)");
            }
            backward(loss);
            sgd_step(net, schedule.lr_at(step + 1));
            ++step;

            loss_sum += loss.item() * static_cast<double>(indices.size());
            for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
            seen += indices.size();
        }

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.instrumentation.wall_time_per_epoch.push_back(secs);
        result.epochs.push_back({epoch, loss_sum / static_cast<double>(seen),
                                 static_cast<double>(correct) / static_cast<double>(seen), secs, gated});
    }

    const auto delta = snapshot_passes() - before;
    result.instrumentation.forward_passes = delta.forward_passes;
    result.instrumentation.param_backward_passes = delta.param_backward_passes;
    result.instrumentation.input_grad_passes = delta.input_grad_passes;
    return result;
}

std::vector<TimingRow> train_time_benchmark(const std::vector<TrainSpec>& specs, const Dataset& dataset,
                                            const std::string& preset, std::uint64_t model_seed) {
    for (std::size_t i = 1; i < specs.size(); ++i) {
        if (specs[i].epochs != specs[0].epochs || specs[i].batch_size != specs[0].batch_size) {
            throw ContractError("benchmark specs must share epochs and batch size");
        }
    }
    std::vector<TimingRow> rows;
    for (const auto& spec : specs) {
        auto model = make_model(preset, dataset.sample_shape(), dataset.num_classes, model_seed);
        auto result = train(std::move(model), dataset, spec);
        std::string name = to_string(spec.method);
        if (spec.method == TrainMethod::pgd_at) name += "-" + std::to_string(spec.attack->iterations);
        rows.push_back({name, result.instrumentation.median_epoch_seconds(), result.instrumentation,
                        result.batches_per_epoch});
    }
    return rows;
}

}  // namespace eae
