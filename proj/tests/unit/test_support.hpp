#pragma once

// Shared generators and fixtures for the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "astra/pose/skeleton.hpp"

namespace astra::test {

inline std::filesystem::path data_dir() { return ASTRA_TEST_DATA_DIR; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng{std::random_device{}()};
        path_ = std::filesystem::temp_directory_path() / ("astra-" + tag + "-" + std::to_string(rng()));
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

/// Skeleton with every keypoint visible somewhere on a width x height canvas.
inline pose::PoseSkeleton random_skeleton(std::mt19937_64& rng, double width = 640.0, double height = 480.0) {
    std::uniform_real_distribution<double> ux(0.0, width - 1.0);
    std::uniform_real_distribution<double> uy(0.0, height - 1.0);
    std::uniform_real_distribution<double> ua(2000.0, 40000.0);
    pose::PoseSkeleton s;
    for (auto& kp : s.keypoints) {
        kp = {ux(rng), uy(rng), pose::Visibility::Visible};
    }
    s.area = ua(rng);
    return s;
}

/// Copy of `s` with every keypoint displaced by a Gaussian of `sigma` pixels.
inline pose::PoseSkeleton jitter(const pose::PoseSkeleton& s, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, sigma);
    pose::PoseSkeleton out = s;
    for (auto& kp : out.keypoints) {
        kp.x += n(rng);
        kp.y += n(rng);
    }
    return out;
}

inline std::vector<float> random_unit_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> raw(dim);
    double norm = 0.0;
    for (auto& x : raw) {
        x = n(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = static_cast<float>(raw[i] / norm);
    }
    return out;
}

}  // namespace astra::test
