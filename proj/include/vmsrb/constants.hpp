#pragma once

#include "vmsrb/assembly.hpp"

namespace vmsrb {

/// Discrete constants measured on the homogeneous-Dirichlet subspace of a
/// FeSystem. These feed the continuity/Lipschitz envelopes of the error
/// estimator; none of them is assumed, all are computed.

/// Sobolev embedding constant sup ||v||_L4 / ||grad v||_L2 over discrete
/// H1_0 velocity fields, via an inverse-iteration ascent on the nonlinear
/// Rayleigh quotient from several random starts.
double measure_c_s4(const FeSystem& sys, int starts = 6, int iters = 120, unsigned seed = 1);

/// Same ascent against an arbitrary SPD velocity Gram (full
/// component-blocked size): sup ||v||_L4 / sqrt(v' G v). With G = K()
/// this is measure_c_s4; the estimator machinery passes the weighted
/// T-product Gram.
double measure_c_s4_gram(const FeSystem& sys, const SpMat& gram, int starts = 6,
                         int iters = 120, unsigned seed = 1);

/// Stability of the scale-separation projector: sup ||grad(Pi_h u)|| / ||grad u||.
double measure_c_f(const FeSystem& sys);

/// LPS fluctuation bound with the h^2 envelope of the stabilization
/// weights: sup ||sigma*(grad q)||_{h_K^2} / ||q||_0 over pressures.
double measure_c_tau(const FeSystem& sys);

/// Poincare constant ||v||_0 <= C_P ||grad v||_0 on discrete H1_0.
double measure_c_p(const FeSystem& sys);

/// L4 norm of a velocity field (Euclidean pointwise magnitude).
double velocity_l4_norm(const FeSystem& sys, const VectorXd& u);

/// Largest eigenvalue of the pencil B v = lambda A v with A SPD, by power
/// iteration on A^{-1} B with A-normalization.
double pencil_max_eig(const SpMat& b, const SpMat& a, int iters = 400, double tol = 1e-12,
                      unsigned seed = 2);

/// Component-blocked vector dof indices of the free (non-Dirichlet)
/// velocity scalar dofs: [free_x, free_y].
std::vector<int> free_velocity_vector_dofs(const FeSystem& sys);

/// Stabilized discrete inf-sup constant: sqrt of the smallest nonzero
/// eigenvalue of (D K^{-1} D^T + S(tau)) q = lambda M_p q, i.e. the alpha
/// of the pressure stability bound (sup_v b(v,q)/|grad v| plus the LPS
/// fluctuation norm controls alpha |q|_0). The constant-pressure mode is
/// an exact zero eigenvalue and is skipped.
double measure_inf_sup_alpha(const FeSystem& sys, const VectorXd& tau_elem);

}  // namespace vmsrb
