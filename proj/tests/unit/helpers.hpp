#pragma once
// Shared fixtures for the unit tests.

#include "scatgate/frame.hpp"
#include "scatgate/synth.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("scatgate-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
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

inline scatgate::ScatterFrame constant_frame(int w, int h, double v, std::string id = "const") {
    return scatgate::ScatterFrame(std::move(id), w, h, std::vector<double>(static_cast<std::size_t>(w) * h, v));
}

inline scatgate::ScatterFrame random_frame(int w, int h, std::uint64_t seed, std::string id = "rand") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> px(static_cast<std::size_t>(w) * h);
    for (auto& v : px) v = u(rng);
    return scatgate::ScatterFrame(std::move(id), w, h, std::move(px));
}

/// One noise-free ring, no gaps or beamstop.
inline scatgate::synth::RingSpec single_ring(scatgate::Point2 c, double radius, double sigma = 2.0,
                                             double amplitude = 1.0) {
    scatgate::synth::RingSpec s;
    s.center = c;
    s.rings = {{radius, sigma, amplitude}};
    return s;
}

}  // namespace testing
