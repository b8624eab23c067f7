#pragma once

// L-infinity input-space attacks in the [0, 1] pixel domain.
//
// Every input-gradient evaluation is one backward pass with parameter
// gradients disabled, so it counts as an input-gradient pass and never
// touches the model's parameter grads.

#include <cstdint>
#include <string>
#include <vector>

#include "eae/nn.hpp"
#include "eae/tensor.hpp"

namespace eae {

enum class AttackKind { fgsm, rfgsm, bim, pgd, fast_step };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);

struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    double epsilon = 8.0 / 255.0;
    /// Step size for bim/pgd/fast-step; noise magnitude for rfgsm
    /// (the sign step then uses epsilon - alpha). Unused by fgsm.
    double alpha = 2.0 / 255.0;
    std::size_t iterations = 1;
    bool random_start = false;
    std::uint64_t seed = 0;

    /// Throws ContractError on an inconsistent spec.
    void validate() const;
    /// Short label such as "pgd(eps=0.0627,alpha=0.0314,K=7)".
    std::string label() const;
    /// Number of input-gradient passes one call performs.
    std::size_t gradient_passes() const;
};

struct PerturbedBatch {
    Tensor x_adv;
    /// prediction(x_adv) != ground truth, per row.
    std::vector<bool> success_mask;

    double success_rate() const;
};

/// Gradient of the mean cross-entropy w.r.t. x (one input-gradient pass).
std::vector<double> input_gradient(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels);

/// Adversarial inputs only; costs exactly spec.gradient_passes() forward and
/// input-gradient passes. Used inside training loops.
Tensor perturb(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec);

/// perturb() plus one evaluation forward to fill the success mask.
PerturbedBatch attack(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                      const AttackSpec& spec);

PerturbedBatch fgsm(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec);
PerturbedBatch rfgsm(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec);
PerturbedBatch bim(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec);
PerturbedBatch pgd(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels, const AttackSpec& spec);
PerturbedBatch fast_step(const Model& model, const Tensor& x, const std::vector<ClassIndex>& labels,
                         const AttackSpec& spec);

/// Largest |x_adv - x| over all coordinates.
double linf_distance(const Tensor& a, const Tensor& b);

/// True when every coordinate is within epsilon (+ tol) of x and inside [0, 1].
bool within_budget(const Tensor& x, const Tensor& x_adv, double epsilon, double tol = 1e-9);

}  // namespace eae
