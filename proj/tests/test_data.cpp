#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "eae/errors.hpp"
#include "eae/data.hpp"
#include "eae/evalbench.hpp"
#include "eae/train.hpp"
#include "support.hpp"

using namespace eae;
using eae::testing::CifarRecord;
using eae::testing::TempDir;
using eae::testing::write_cifar;

namespace {

CifarRecord record(std::uint8_t label, std::uint8_t fill) {
    return {label, std::vector<std::uint8_t>(3072, fill)};
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::uint32_t n,
               std::uint32_t rows, std::uint32_t cols) {
    auto be = [](std::ofstream& o, std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) o.put(static_cast<char>((v >> s) & 0xFF));
    };
    std::ofstream im(images, std::ios::binary), lb(labels, std::ios::binary);
    be(im, 0x803);
    be(im, n);
    be(im, rows);
    be(im, cols);
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) im.put(static_cast<char>(i % 256));
    be(lb, 0x801);
    be(lb, n);
    for (std::uint32_t i = 0; i < n; ++i) lb.put(static_cast<char>(i % 10));
}

}  // namespace

TEST(Cifar, TwoRecordFixture) {
    TempDir dir("cifar");
    write_cifar(dir / "b.bin", {record(3, 0), record(7, 255)});
    const auto d = load_cifar10_binary(dir / "b.bin");
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.labels, (std::vector<ClassIndex>{3, 7}));
    EXPECT_EQ(d.inputs.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(d.inputs.at(3072), 1.0);
    EXPECT_EQ(d.inputs.at(0), 0.0);
    d.validate();
}

TEST(Cifar, ChannelMajorLayoutAndScale) {
    TempDir dir("cifar");
    CifarRecord r{1, std::vector<std::uint8_t>(3072)};
    for (std::size_t i = 0; i < 3072; ++i) r.pixels[i] = static_cast<std::uint8_t>(i / 1024 * 100 + i % 7);
    write_cifar(dir / "b.bin", {r});
    const auto d = load_cifar10_binary(dir / "b.bin");
    for (std::size_t i = 0; i < 3072; ++i) EXPECT_EQ(d.inputs.at(i), r.pixels[i] / 255.0);
}

TEST(Cifar, PerClassCapKeepsFirstOccurrence) {
    TempDir dir("cifar");
    std::vector<CifarRecord> recs;
    const std::uint8_t labels[10] = {2, 5, 2, 5, 9, 2, 0, 9, 5, 0};
    for (std::uint8_t i = 0; i < 10; ++i) recs.push_back(record(labels[i], static_cast<std::uint8_t>(i * 10)));
    write_cifar(dir / "b.bin", recs);
    const auto d = load_cifar10_binary(dir / "b.bin", {{}, 1});
    EXPECT_EQ(d.labels, (std::vector<ClassIndex>{2, 5, 9, 0}));
    EXPECT_EQ(d.inputs.at(0), 0.0);
    EXPECT_EQ(d.inputs.at(3 * 3072), 60.0 / 255.0);

    const auto only = load_cifar10_binary(dir / "b.bin", {{5, 0}, std::nullopt});
    EXPECT_EQ(only.labels, (std::vector<ClassIndex>{5, 5, 0, 5, 0}));
}

TEST(Cifar, TruncatedFileReportsOffset) {
    TempDir dir("cifar");
    write_cifar(dir / "b.bin", {record(1, 1), record(2, 2)});
    std::filesystem::resize_file(dir / "b.bin", 3073 + 100);
    try {
        load_cifar10_binary(dir / "b.bin");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 3073u);
    }
}

TEST(Cifar, LoaderIsDeterministic) {
    TempDir dir("cifar");
    write_cifar(dir / "b.bin", {record(4, 10), record(8, 200), record(4, 30)});
    const auto a = load_cifar10_binary(dir / "b.bin"), b = load_cifar10_binary(dir / "b.bin");
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_TRUE(std::equal(a.inputs.data().begin(), a.inputs.data().end(), b.inputs.data().begin()));
}

TEST(Idx, LoadsImagesAndLabels) {
    TempDir dir("idx");
    write_idx(dir / "img", dir / "lab", 12, 4, 5);
    const auto d = load_idx(dir / "img", dir / "lab", 10);
    EXPECT_EQ(d.inputs.shape(), (Shape{10, 1, 4, 5}));
    EXPECT_EQ(d.labels[9], 9u);
    EXPECT_EQ(d.inputs.at(21), 21.0 / 255.0);
    EXPECT_THROW(load_idx(dir / "lab", dir / "img"), FormatError);
}

TEST(Synthetic, ZeroNoiseBlobsAreLearnable) {
    const auto d = eae::testing::blobs(2, 100, 2, 0.0, 4);
    std::set<std::pair<double, double>> points;
    for (std::size_t i = 0; i < d.size(); ++i) points.insert({d.inputs.at(2 * i), d.inputs.at(2 * i + 1)});
    EXPECT_EQ(points.size(), 2u);

    TrainSpec spec;
    spec.epochs = 20;
    spec.batch_size = 10;
    spec.clr_max = 0.2;
    const auto r = train(make_model("mlp-small", {2}, 2, 1), d, spec);
    EXPECT_EQ(accuracy(r.model, d), 1.0);
}

TEST(Synthetic, SameSeedIsBitIdentical) {
    for (auto kind : {SyntheticKind::gaussian_blobs, SyntheticKind::rings}) {
        SyntheticSpec s{kind, 4, 201, 3, 0.2, 77, {}};
        const auto a = make_synthetic(s), b = make_synthetic(s);
        EXPECT_EQ(a.labels, b.labels);
        EXPECT_TRUE(std::equal(a.inputs.data().begin(), a.inputs.data().end(), b.inputs.data().begin()));
        s.seed = 78;
        const auto c = make_synthetic(s);
        EXPECT_FALSE(std::equal(a.inputs.data().begin(), a.inputs.data().end(), c.inputs.data().begin()));
    }
}

TEST(Synthetic, BalancedAndScaled) {
    SyntheticSpec s{SyntheticKind::rings, 3, 300, 2, 0.1, 1, {}};
    const auto d = make_synthetic(s);
    std::map<ClassIndex, int> counts;
    for (auto y : d.labels) ++counts[y];
    EXPECT_EQ(counts, (std::map<ClassIndex, int>{{0, 100}, {1, 100}, {2, 100}}));
    d.validate();

    const auto odd = eae::testing::blobs(4, 203, 5, 0.3, 2, {5, 1});
    std::map<ClassIndex, int> oc;
    for (auto y : odd.labels) ++oc[y];
    for (const auto& [k, v] : oc) EXPECT_TRUE(v == 50 || v == 51) << k;
    EXPECT_EQ(odd.inputs.shape(), (Shape{203, 5, 1}));
    double lo = 1, hi = 0;
    for (double v : odd.inputs.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
}

TEST(Synthetic, Preconditions) {
    EXPECT_THROW(make_synthetic({SyntheticKind::gaussian_blobs, 1, 10, 2, 0.1, 0, {}}), ContractError);
    EXPECT_THROW(make_synthetic({SyntheticKind::gaussian_blobs, 5, 4, 2, 0.1, 0, {}}), ContractError);
    EXPECT_THROW(synthetic_kind_from_string("moons"), ContractError);
}

TEST(Batches, SizesAndPartition) {
    const auto d = eae::testing::blobs(2, 10, 2, 0.1, 0);
    const BatchPlan plan{4, 9};
    std::vector<std::size_t> sizes, seen;
    for (const auto& b : batches(d, plan)) {
        sizes.push_back(b.labels.size());
        seen.insert(seen.end(), b.indices.begin(), b.indices.end());
        for (std::size_t i = 0; i < b.indices.size(); ++i) {
            EXPECT_EQ(b.labels[i], d.labels[b.indices[i]]);
            EXPECT_EQ(b.inputs.at(2 * i), d.inputs.at(2 * b.indices[i]));
        }
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
    EXPECT_EQ(plan.count(10), 3u);
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(seen[i], i);
}

TEST(Batches, EpochsReshuffle) {
    const BatchPlan plan{1000, 5};
    const auto a = epoch_batches(1000, plan, 0), b = epoch_batches(1000, plan, 1);
    EXPECT_NE(a[0], b[0]);
    EXPECT_EQ(a, epoch_batches(1000, plan, 0));
    auto sorted = b[0];
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Split, DisjointAndDeterministic) {
    const auto d = eae::testing::blobs(3, 90, 2, 0.1, 3);
    const auto [tr, te] = split(d, 30, 11);
    EXPECT_EQ(tr.size(), 60u);
    EXPECT_EQ(te.size(), 30u);
    const auto [tr2, te2] = split(d, 30, 11);
    EXPECT_EQ(te.labels, te2.labels);
    EXPECT_THROW(split(d, 90, 1), ContractError);
}
