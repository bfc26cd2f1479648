#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mixode {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error taxonomy shared across the library. The CLI maps codes to exit
// statuses: Parse-like failures -> 2, NonConvergence -> 3, Numerical -> 4.
enum class ErrorCode {
  InvalidArgument,
  InsufficientData,
  Lookup,
  Range,
  Parse,
  NonConvergence,
  Numerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonConvergence:
      return 3;
    case ErrorCode::Numerical:
      return 4;
    default:
      return 2;
  }
}

// SplitMix64 step; used to derive independent RNG streams from a master seed
// so per-subject / per-replicate draws do not depend on execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 1));
}

// Shortest round-trip decimal representation; deterministic across runs.
inline std::string format_shortest(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace mixode
