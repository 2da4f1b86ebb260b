#ifndef LSC_COMMON_HPP
#define LSC_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsc {

// Errors split in two groups: validation errors come from bad inputs and map
// to CLI exit code 1, runtime errors to exit code 2.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual bool is_validation() const { return true; }
};

struct FormatError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct ValueError : Error { using Error::Error; };
struct PreconditionError : Error { using Error::Error; };
struct KeyError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

struct RuntimeFault : Error {
    using Error::Error;
    bool is_validation() const override { return false; }
};
struct IoError : RuntimeFault { using RuntimeFault::RuntimeFault; };
struct StateError : RuntimeFault { using RuntimeFault::RuntimeFault; };
struct TrainingError : RuntimeFault { using RuntimeFault::RuntimeFault; };
struct OptimizerError : RuntimeFault { using RuntimeFault::RuntimeFault; };
struct InternalError : RuntimeFault { using RuntimeFault::RuntimeFault; };

// Seeded PRNG with self-contained uniform/normal transforms. std::mt19937_64
// output is fully specified by the standard, the std distributions are not,
// so bit reproducibility across platforms requires doing the mapping here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::size_t below(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, one value per call (the pair's second half is discarded to
    // keep the stream position a simple function of call count)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream, e.g. one per fold or per epoch.
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = gen_() ^ (salt * 0x9e3779b97f4a7c15ULL);
        return Rng(s);
    }

private:
    std::mt19937_64 gen_;
};

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace lsc

#endif
