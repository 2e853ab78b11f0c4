#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ove6d/nn/tape.hpp"
#include "ove6d/render.hpp"

namespace ove6d {

struct GradCheckResult {
  std::string name;
  /// max over inputs of |g - g_fd| / max(|g|, |g_fd|, 1e-6 |g_all|), norms over each input tensor.
  double max_rel_err = 0;
  bool pass = false;
};

/// Builds a scalar from variables holding `inputs` and compares reverse-mode gradients with
/// central differences.
GradCheckResult grad_check(const std::string& name, const std::vector<nn::Tensor<double>>& inputs,
                           const std::function<int(nn::Tape<double>&, const std::vector<int>&)>& build,
                           double eps = 1e-6, double tol = 1e-4);

/// sum_i w_i y_i with fixed pseudo-random weights; turns any node into a scalar for grad_check.
int random_projection(nn::Tape<double>& tape, int y, std::uint64_t seed);

/// Every layer, the spatial transform, the three losses and the full training loss of a micro
/// network, on randomized shapes.
std::vector<GradCheckResult> gradient_suite(std::uint64_t seed);

/// Brute-force ray casting through every pixel center against every triangle (Moller-Trumbore),
/// keeping the nearest front face.
DepthFrame ray_cast_depth(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& intr);

struct SelftestCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<SelftestCheck> run_selftest(std::uint64_t seed);

}  // namespace ove6d
