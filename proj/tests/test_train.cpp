#include <gtest/gtest.h>

#include "eae/errors.hpp"
#include "eae/evalbench.hpp"
#include "eae/train.hpp"
#include "support.hpp"

using namespace eae;

namespace {

const Dataset& data() {
    static const Dataset d = eae::testing::blobs(3, 200, 8, 0.3, 6);
    return d;
}

TrainSpec spec_for(TrainMethod m, std::size_t epochs = 2) {
    TrainSpec s;
    s.method = m;
    s.epochs = epochs;
    s.batch_size = 32;
    s.clr_max = 0.1;
    s.seed = 5;
    AttackSpec a;
    a.epsilon = 0.05;
    switch (m) {
        case TrainMethod::eae: s.gamma = 3.0; break;
        case TrainMethod::fgsm_at:
            a.kind = AttackKind::fgsm;
            a.alpha = 0.0;
            s.attack = a;
            break;
        case TrainMethod::fast_at:
            a.kind = AttackKind::fast_step;
            a.alpha = 0.0625;
            s.attack = a;
            break;
        case TrainMethod::pgd_at:
            a.kind = AttackKind::pgd;
            a.alpha = 0.025;
            a.iterations = 7;
            a.random_start = true;
            s.attack = a;
            break;
        case TrainMethod::normal: break;
    }
    return s;
}

}  // namespace

TEST(Train, PassCountIdentities) {
    struct Want {
        TrainMethod m;
        std::uint64_t fwd, pbwd, igrad;
    };
    for (const auto& w : {Want{TrainMethod::normal, 1, 1, 0}, Want{TrainMethod::eae, 1, 1, 0},
                          Want{TrainMethod::fgsm_at, 2, 1, 1}, Want{TrainMethod::fast_at, 2, 1, 1},
                          Want{TrainMethod::pgd_at, 8, 1, 7}}) {
        const auto s = spec_for(w.m, 3);
        const auto r = train(make_model("mlp-small", {8}, 3, 1), data(), s);
        const std::uint64_t steps = 3 * r.batches_per_epoch;
        EXPECT_EQ(r.batches_per_epoch, 7u);
        EXPECT_EQ(r.instrumentation.forward_passes, w.fwd * steps) << to_string(w.m);
        EXPECT_EQ(r.instrumentation.param_backward_passes, w.pbwd * steps) << to_string(w.m);
        EXPECT_EQ(r.instrumentation.input_grad_passes, w.igrad * steps) << to_string(w.m);
        EXPECT_EQ(r.instrumentation.wall_time_per_epoch.size(), 3u);
    }
}

TEST(Train, EaeGateFiresAndGammaZeroMatchesNormal) {
    auto s = spec_for(TrainMethod::eae, 2);
    const auto r = train(make_model("mlp-small", {8}, 3, 1), data(), s);
    EXPECT_GT(r.epochs[0].perturbed_rows, 0u);

    s.gamma = 0.0;
    const auto zero = train(make_model("mlp-small", {8}, 3, 1), data(), s);
    auto n = spec_for(TrainMethod::normal, 2);
    const auto normal = train(make_model("mlp-small", {8}, 3, 1), data(), n);
    EXPECT_EQ(checkpoint_bytes(zero.model), checkpoint_bytes(normal.model));
    for (const auto& e : zero.epochs) EXPECT_EQ(e.perturbed_rows, 0u);
}

TEST(Train, ZeroNoiseBlobsReachFullAccuracy) {
    const auto d = eae::testing::blobs(3, 150, 4, 0.0, 2);
    auto s = spec_for(TrainMethod::normal, 20);
    s.batch_size = 16;
    s.clr_max = 0.2;
    const auto r = train(make_model("mlp-small", {4}, 3, 3), d, s);
    EXPECT_EQ(r.epochs.back().train_accuracy, 1.0);
    EXPECT_EQ(accuracy(r.model, d), 1.0);
}

TEST(Train, BitReproducible) {
    for (auto m : {TrainMethod::eae, TrainMethod::pgd_at, TrainMethod::fast_at}) {
        const auto s = spec_for(m, 2);
        const auto a = train(make_model("mlp-small", {8}, 3, 1), data(), s);
        const auto b = train(make_model("mlp-small", {8}, 3, 1), data(), s);
        EXPECT_EQ(checkpoint_bytes(a.model), checkpoint_bytes(b.model)) << to_string(m);
        for (std::size_t e = 0; e < a.epochs.size(); ++e) EXPECT_EQ(a.epochs[e].mean_loss, b.epochs[e].mean_loss);
    }
}

TEST(Train, SmoothedLossMostlyDecreasesEarly) {
    const auto d = eae::testing::blobs(3, 600, 8, 0.4, 8);
    auto s = spec_for(TrainMethod::normal, 10);
    const auto r = train(make_model("mlp-small", {8}, 3, 1), d, s);
    for (std::size_t e = 1; e < 5; ++e) EXPECT_LE(r.epochs[e].mean_loss, r.epochs[e - 1].mean_loss * 1.05);
}

TEST(Train, NanLossAborts) {
    auto s = spec_for(TrainMethod::normal, 2);
    s.clr_max = 1e200;
    EXPECT_THROW(train(make_model("mlp-small", {8}, 3, 1), data(), s), NumericError);
}

TEST(TrainSpec, MethodSpecificFields) {
    auto s = spec_for(TrainMethod::eae);
    s.gamma.reset();
    EXPECT_THROW(s.validate(), ContractError);
    s = spec_for(TrainMethod::normal);
    s.gamma = 3.0;
    EXPECT_THROW(s.validate(), ContractError);
    s = spec_for(TrainMethod::pgd_at);
    s.attack->kind = AttackKind::fgsm;
    EXPECT_THROW(s.validate(), ContractError);
    s = spec_for(TrainMethod::fgsm_at);
    s.attack.reset();
    EXPECT_THROW(s.validate(), ContractError);
    s = spec_for(TrainMethod::normal);
    s.attack = spec_for(TrainMethod::fgsm_at).attack;
    EXPECT_THROW(s.validate(), ContractError);
    EXPECT_THROW(train_method_from_string("free-at"), ContractError);
    EXPECT_EQ(train_method_from_string("fast-at"), TrainMethod::fast_at);
}

TEST(Train, RejectsEmptyOrMismatchedData) {
    const auto s = spec_for(TrainMethod::normal);
    EXPECT_THROW(train(make_model("mlp-small", {8}, 4, 1), data(), s), ContractError);
}

TEST(Instrumentation, MedianSkipsWarmup) {
    Instrumentation i;
    i.wall_time_per_epoch = {100.0, 1.0, 3.0, 2.0};
    EXPECT_EQ(i.median_epoch_seconds(), 2.0);
    i.wall_time_per_epoch = {5.0};
    EXPECT_EQ(i.median_epoch_seconds(), 5.0);
    i.wall_time_per_epoch = {9.0, 1.0, 2.0};
    EXPECT_EQ(i.median_epoch_seconds(), 1.5);
}

TEST(TimeBenchmark, OneRowPerMethod) {
    std::vector<TrainSpec> specs;
    for (auto m : {TrainMethod::normal, TrainMethod::eae, TrainMethod::fgsm_at, TrainMethod::pgd_at}) {
        specs.push_back(spec_for(m, 2));
    }
    const auto rows = train_time_benchmark(specs, data(), "mlp-small", 3);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[3].method, "pgd-at-7");
    EXPECT_EQ(rows[1].instrumentation.input_grad_passes, 0u);
    for (const auto& r : rows) EXPECT_GT(r.sec_per_epoch, 0.0);
    specs[1].epochs = 3;
    EXPECT_THROW(train_time_benchmark(specs, data(), "mlp-small", 3), ContractError);
}

TEST(TimeBenchmark, IdenticalMethodsTimeAlike) {
    const auto d = eae::testing::blobs(3, 1500, 64, 0.3, 1, {1, 8, 8});
    const auto s = spec_for(TrainMethod::normal, 5);
    const auto rows = train_time_benchmark({s, s, s}, d, "cnn-small", 2);
    // the first run absorbs cache warm-up; compare the later pair. Loose on
    // purpose: this only catches gross bookkeeping errors on a shared machine.
    const double a = rows[1].sec_per_epoch, b = rows[2].sec_per_epoch;
    EXPECT_LT(std::abs(a - b) / std::min(a, b), 0.5);
}

TEST(RunReport, SummarizesInstrumentation) {
    const auto s = spec_for(TrainMethod::fgsm_at, 2);
    const auto r = train(make_model("mlp-small", {8}, 3, 1), data(), s);
    const auto rep = r.report(s);
    EXPECT_EQ(rep.method, "fgsm-at");
    EXPECT_EQ(rep.input_grad_bwd, 14u);
    EXPECT_EQ(rep.param_bwd, 14u);
    EXPECT_EQ(rep.epoch_log.size(), 2u);
    EXPECT_EQ(rep.config["attack"]["kind"], "fgsm");
    EXPECT_EQ(rep.threads, 1u);
}
