#ifndef UAP_COMMON_H_
#define UAP_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace uap {

enum class ErrorCode {
  kInvalidArgument,
  kSpecMismatch,
  kParse,
  kIo,
  kNonDifferentiable,
  kNumerical,
  kNotFound,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures are reported through this exception. The code is
// stable and is what the CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void Fail(ErrorCode code, const std::string& message);

inline void Require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) Fail(code, message);
}

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t MixSeed(std::uint64_t x);

inline std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t a) {
  return MixSeed(seed ^ MixSeed(a + 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b) {
  return DeriveSeed(DeriveSeed(seed, a), b);
}

// Seeded generator with platform-independent sampling helpers. The standard
// distributions are implementation-defined, so only the raw engine output is
// used here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1).
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t Below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double Normal();

  // Poisson via inversion; fine for the small means used here.
  int Poisson(double mean);

 private:
  std::mt19937_64 engine_;
};

}  // namespace uap

#endif  // UAP_COMMON_H_
