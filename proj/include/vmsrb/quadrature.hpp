#pragma once

#include "vmsrb/common.hpp"

namespace vmsrb {

/// Quadrature rule on the reference triangle {(x,y): x,y>=0, x+y<=1}.
/// Weights sum to the reference area 1/2; physical weights are w * 2*area_K.
struct QuadratureRule {
  int degree = 0;  // polynomial exactness
  Eigen::Matrix<double, Eigen::Dynamic, 2> points;
  VectorXd weights;
  int size() const { return static_cast<int>(weights.size()); }
};

/// Smallest shipped rule exact for polynomials of the requested degree.
/// Available exactness degrees: 1, 2, 5, 6. Throws ConfigError beyond 6.
QuadratureRule triangle_rule(int degree);

}  // namespace vmsrb
