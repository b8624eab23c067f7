#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eae/data.hpp"
#include "eae/random.hpp"
#include "eae/tensor.hpp"

namespace eae::testing {

inline double rel_err(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = false) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences over every coordinate of every leaf against the tape.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves,
                                 double h = 1e-6, double floor = 1e-3) {
    std::vector<std::vector<double>> analytic;
    {
        GradTape tape;
        for (auto t : leaves) t.zero_grad();
        backward(loss());
        for (const auto& t : leaves) {
            if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
            else analytic.emplace_back(t.numel(), 0.0);  // leaf not reached by this loss
        }
        for (auto t : leaves) t.zero_grad();
    }
    GradCheck out;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        Tensor leaf = leaves[l];
        auto data = leaf.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double keep = data[i];
            data[i] = keep + h;
            const double fp = loss().item();
            data[i] = keep - h;
            const double fm = loss().item();
            data[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            out.max_rel = std::max(out.max_rel, rel_err(analytic[l][i], numeric, floor));
            ++out.checked;
        }
    }
    return out;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("eae_" + tag + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct CifarRecord {
    std::uint8_t label = 0;
    std::vector<std::uint8_t> pixels;  // 3072 bytes, channel-major
};

inline void write_cifar(const std::filesystem::path& path, const std::vector<CifarRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& r : records) {
        out.put(static_cast<char>(r.label));
        std::vector<std::uint8_t> px = r.pixels;
        px.resize(3072, 0);
        out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Dataset blobs(std::size_t classes, std::size_t count, std::size_t dim, double noise, std::uint64_t seed,
                     Shape sample_shape = {}) {
    SyntheticSpec s;
    s.kind = SyntheticKind::gaussian_blobs;
    s.num_classes = classes;
    s.count = count;
    s.dim = dim;
    s.noise = noise;
    s.seed = seed;
    s.sample_shape = std::move(sample_shape);
    return make_synthetic(s);
}

}  // namespace eae::testing
