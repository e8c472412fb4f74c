#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pelab {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Invalid configuration, arguments or file contents. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite numerics or an unrecoverable runtime failure. The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Mat3 skew(const Vec3& v);

// Re-orthonormalizes a drifting rotation matrix column-wise (Gram-Schmidt).
Mat3 orthonormalized(const Mat3& r);

// Unit quaternion (w, x, y, z) from a rotation matrix, w >= 0.
Vec4 rotation_to_quat_wxyz(const Mat3& r);

uint64_t splitmix64(uint64_t& state);

// Deterministic seed derivation for independent sub-streams.
uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0);

// Deterministic RNG wrapper. Uniform/normal draws are hand-rolled from raw 64-bit
// output so the streams do not depend on the standard library's distribution
// implementations and never carry hidden state between calls.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; draws two uniforms per call, keeps no cache.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  Rng split(uint64_t salt) { return Rng(mix_seed(next_u64(), salt)); }

 private:
  std::mt19937_64 gen_;
};

uint64_t fnv1a64(std::string_view data);
std::string hex64(uint64_t v);

}  // namespace pelab
