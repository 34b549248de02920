#include "cdt/rng.hpp"

#include <cmath>
#include <numbers>

namespace cdt {

namespace {

constexpr std::uint64_t kSplitmixGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix64(std::uint64_t x) {
    std::uint64_t z = x + kSplitmixGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    state_ = splitmix64(seed);
    if (state_ == 0) state_ = kSplitmixGamma; // xorshift state must stay nonzero
}

std::uint64_t Rng::next_u64() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1Dull;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw contract_error("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
    const double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t stream) const {
    return Rng(seed_ ^ ((stream + 1) * kSplitmixGamma));
}

Tensor gaussian(Rng& rng, const Shape& shape) {
    check_shape_valid(shape);
    const std::size_t n = shape_size(shape);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; i += 2) {
        const double u1 = 1.0 - rng.uniform();
        const double u2 = rng.uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        out[i] = r * std::cos(th);
        if (i + 1 < n) out[i + 1] = r * std::sin(th);
    }
    return Tensor::from_data(shape, std::move(out));
}

} // namespace cdt
