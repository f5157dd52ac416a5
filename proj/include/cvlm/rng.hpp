#ifndef CVLM_RNG_HPP
#define CVLM_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace cvlm {

/// Deterministic random stream keyed by (seed, purpose, i, j). Two streams with
/// the same key produce the same sequence regardless of creation order, so
/// per-batch noise does not depend on what was drawn before it.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t i = 0, std::uint64_t j = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cvlm

#endif  // CVLM_RNG_HPP
