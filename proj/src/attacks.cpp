#include "eae/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "eae/errors.hpp"
#include "eae/random.hpp"

namespace eae {

std::string to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::rfgsm: return "rfgsm";
        case AttackKind::bim: return "bim";
        case AttackKind::pgd: return "pgd";
        case AttackKind::fast_step: return "fast-step";
    }
    return "unknown";
}

AttackKind attack_kind_from_string(const std::string& name) {
    if (name == "fgsm") return AttackKind::fgsm;
    if (name == "rfgsm") return AttackKind::rfgsm;
    if (name == "bim") return AttackKind::bim;
    if (name == "pgd") return AttackKind::pgd;
    if (name == "fast-step" || name == "fast_step") return AttackKind::fast_step;
    throw ContractError("unknown attack '" + name + "' (expected fgsm, rfgsm, bim, pgd or fast-step)");
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("attack epsilon must lie in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("attack alpha must lie in [0, 1]");
    if (iterations == 0) throw ContractError("attack iterations must be >= 1");
    switch (kind) {
        case AttackKind::fgsm:
        case AttackKind::fast_step:
            if (iterations != 1) throw ContractError(to_string(kind) + " is single-step (iterations must be 1)");
            break;
        case AttackKind::rfgsm:
            if (iterations != 1) throw ContractError("rfgsm is single-step (iterations must be 1)");
            if (alpha > epsilon) throw ContractError("rfgsm noise magnitude alpha must not exceed epsilon");
            break;
        case AttackKind::bim:
        case AttackKind::pgd: break;
    }
}

std::string AttackSpec::label() const {
    std::ostringstream os;
    os.precision(4);
    os << to_string(kind) << "(eps=" << epsilon;
    if (kind != AttackKind::fgsm) os << ",alpha=" << alpha;
    if (kind == AttackKind::bim || kind == AttackKind::pgd) os << ",K=" << iterations;
    if (kind == AttackKind::pgd && !random_start) os << ",no-rs";
    os << ')';
    return os.str();
}

std::size_t AttackSpec::gradient_passes() const {
    return (kind == AttackKind::bim || kind == AttackKind::pgd) ? iterations : 1;
}

double PerturbedBatch::success_rate() const {
    if (success_mask.empty()) return 0.0;
    return static_cast<double>(std::count(success_mask.begin(), success_mask.end(), true)) /
           static_cast<double>(success_mask.size());
}

std::vector<double> input_gradient(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels) {
    GradTape tape;
    ParameterGradsDisabled frozen;
    Tensor xt(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    auto loss = cross_entropy(forward_logits(model, xt), labels);
    backward(loss);
    return {xt.grad().begin(), xt.grad().end()};
}

namespace {

double sign(double v) { return (v > 0.0) - (v < 0.0); }

// Clamp into the epsilon ball around x, then into [0, 1].
void project(std::vector<double>& adv, std::span<const double> x, double epsilon) {
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double v = std::clamp(adv[i], x[i] - epsilon, x[i] + epsilon);
        adv[i] = std::clamp(v, 0.0, 1.0);
    }
}

void sign_step(std::vector<double>& adv, const Model& model, const Shape& shape,
               const std::vector<ClassIndex>& labels, double step) {
    const auto g = input_gradient(model, Tensor(shape, adv), labels);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += step * sign(g[i]);
}

void uniform_noise(std::vector<double>& adv, double magnitude, Rng& rng) {
    for (auto& v : adv) v += rng.uniform(-magnitude, magnitude);
}

}  // namespace

Tensor perturb(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec) {
    spec.validate();
    if (x.dim(0) != labels.size()) throw DimensionError("attack: batch/label count mismatch");
    const auto clean = x.data();
    std::vector<double> adv(clean.begin(), clean.end());
    Rng rng(spec.seed);

    switch (spec.kind) {
        case AttackKind::fgsm:
            sign_step(adv, model, x.shape(), labels, spec.epsilon);
            project(adv, clean, spec.epsilon);
            break;
        case AttackKind::rfgsm:
            uniform_noise(adv, spec.alpha, rng);
            project(adv, clean, spec.epsilon);
            sign_step(adv, model, x.shape(), labels, spec.epsilon - spec.alpha);
            project(adv, clean, spec.epsilon);
            break;
        case AttackKind::pgd:
            if (spec.random_start) {
                uniform_noise(adv, spec.epsilon, rng);
                project(adv, clean, spec.epsilon);
            }
            [[fallthrough]];
        case AttackKind::bim:
            for (std::size_t k = 0; k < spec.iterations; ++k) {
                sign_step(adv, model, x.shape(), labels, spec.alpha);
                project(adv, clean, spec.epsilon);
            }
            break;
        case AttackKind::fast_step:
            uniform_noise(adv, spec.epsilon, rng);
            project(adv, clean, spec.epsilon);
            sign_step(adv, model, x.shape(), labels, spec.alpha);
            project(adv, clean, spec.epsilon);
            break;
    }
    return Tensor(x.shape(), std::move(adv));
}

PerturbedBatch attack(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                      const AttackSpec& spec) {
    Tensor adv = perturb(model, x, labels, spec);
    const auto pred = argmax_rows(forward_logits(model, adv));
    std::vector<bool> mask(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) mask[i] = pred[i] != labels[i];
    return {std::move(adv), std::move(mask)};
}

namespace {

PerturbedBatch run_as(AttackKind kind, const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                      AttackSpec spec) {
    spec.kind = kind;
    return attack(model, x, labels, spec);
}

}  // namespace

PerturbedBatch fgsm(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec) {
    return run_as(AttackKind::fgsm, model, x, labels, spec);
}

PerturbedBatch rfgsm(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                     const AttackSpec& spec) {
    return run_as(AttackKind::rfgsm, model, x, labels, spec);
}

PerturbedBatch bim(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec) {
    return run_as(AttackKind::bim, model, x, labels, spec);
}

PerturbedBatch pgd(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec) {
    return run_as(AttackKind::pgd, model, x, labels, spec);
}

PerturbedBatch fast_step(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                         const AttackSpec& spec) {
    return run_as(AttackKind::fast_step, model, x, labels, spec);
}

double linf_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("linf_distance: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

bool within_budget(const Tensor& x, const Tensor& x_adv, double epsilon, double tol) {
    if (x.shape() != x_adv.shape()) return false;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x_adv.at(i);
        if (!(v >= 0.0 && v <= 1.0)) return false;
        if (std::abs(v - x.at(i)) > epsilon + tol) return false;
    }
    return true;
}

}  // namespace eae
