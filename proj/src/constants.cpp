#include "vmsrb/constants.hpp"

#include <cmath>
#include <random>

namespace vmsrb {

std::vector<int> free_velocity_vector_dofs(const FeSystem& sys) {
  const std::vector<int> fs = sys.free_velocity_scalar_dofs();
  std::vector<int> v;
  v.reserve(2 * fs.size());
  for (int d : fs) v.push_back(d);
  for (int d : fs) v.push_back(sys.n_us() + d);
  return v;
}

double velocity_l4_norm(const FeSystem& sys, const VectorXd& u) {
  const VectorXd vals = sys.Vq() * u;
  double s = 0;
  for (int g = 0; g < sys.velocity().nq_total(); ++g) {
    const double m2 = vals[2 * g] * vals[2 * g] + vals[2 * g + 1] * vals[2 * g + 1];
    s += sys.qw()[g] * m2 * m2;
  }
  return std::pow(s, 0.25);
}

double pencil_max_eig(const SpMat& b, const SpMat& a, int iters, double tol, unsigned seed) {
  Eigen::SimplicialLDLT<SpMat> solver(a);
  check_numeric(solver.info() == Eigen::Success, "pencil_max_eig: factorization failed");
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss;
  VectorXd v(a.rows());
  for (int i = 0; i < v.size(); ++i) v[i] = gauss(rng);
  double lam = 0;
  for (int it = 0; it < iters; ++it) {
    VectorXd y = solver.solve(b * v);
    const double ny = std::sqrt(y.dot(a * y));
    if (ny == 0) return 0;
    y /= ny;
    const double lam_new = y.dot(b * y);
    const bool done = it > 3 && std::abs(lam_new - lam) <= tol * std::abs(lam_new);
    lam = lam_new;
    v = y;
    if (done) break;
  }
  return lam;
}

double measure_c_s4(const FeSystem& sys, int starts, int iters, unsigned seed) {
  return measure_c_s4_gram(sys, sys.K(), starts, iters, seed);
}

double measure_c_s4_gram(const FeSystem& sys, const SpMat& gram, int starts, int iters,
                         unsigned seed) {
  require(gram.rows() == sys.n_u() && gram.cols() == sys.n_u(),
          "measure_c_s4_gram: gram size mismatch");
  const std::vector<int> vdofs = free_velocity_vector_dofs(sys);
  const SpMat r = row_selection(vdofs, sys.n_u());
  const SpMat kff = r * gram * SpMat(r.transpose());
  Eigen::SimplicialLDLT<SpMat> solver(kff);
  check_numeric(solver.info() == Eigen::Success, "measure_c_s4: gram factorization failed");

  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss;
  double best = 0;
  for (int s = 0; s < starts; ++s) {
    VectorXd v(static_cast<int>(vdofs.size()));
    for (int i = 0; i < v.size(); ++i) v[i] = gauss(rng);
    v /= std::sqrt(v.dot(kff * v));
    double ratio = 0;
    for (int it = 0; it < iters; ++it) {
      const VectorXd u = r.transpose() * v;
      const VectorXd vals = sys.Vq() * u;
      // gradient of ||v||_L4^4 with respect to the coefficients
      VectorXd sgrad(vals.size());
      for (int g = 0; g < sys.velocity().nq_total(); ++g) {
        const double m2 =
            vals[2 * g] * vals[2 * g] + vals[2 * g + 1] * vals[2 * g + 1];
        sgrad[2 * g] = 4.0 * sys.qw()[g] * m2 * vals[2 * g];
        sgrad[2 * g + 1] = 4.0 * sys.qw()[g] * m2 * vals[2 * g + 1];
      }
      VectorXd y = solver.solve(r * (sys.Vq().transpose() * sgrad));
      const double ny = std::sqrt(y.dot(kff * y));
      if (ny == 0) break;
      v = y / ny;
      const double next = velocity_l4_norm(sys, r.transpose() * v);
      if (it > 5 && std::abs(next - ratio) <= 1e-11 * next) {
        ratio = next;
        break;
      }
      ratio = next;
    }
    best = std::max(best, ratio);
  }
  return best;
}

double measure_c_f(const FeSystem& sys) {
  const int ns = sys.n_us();
  const SpMat& pi = sys.scales().pi_scalar();
  SpMat pik = pi.transpose() * sys.Ks() * pi;  // grad(Pi u) energy, scalar
  const std::vector<int> fs = sys.free_velocity_scalar_dofs();
  const SpMat r = row_selection(fs, ns);
  const SpMat bff = r * pik * r.transpose();
  const SpMat kff = r * sys.Ks() * r.transpose();
  return std::sqrt(pencil_max_eig(bff, kff));
}

double measure_c_tau(const FeSystem& sys) {
  // weight sigma*(grad q) samples by h_K^2 * quadrature weight
  VectorXd d(2 * sys.velocity().nq_total());
  for (int g = 0; g < sys.velocity().nq_total(); ++g) {
    const double h = sys.mesh().h_K[sys.qelem()[g]];
    d[2 * g] = d[2 * g + 1] = h * h * sys.qw()[g];
  }
  const SpMat& e = sys.E();
  SpMat b = SpMat(e.transpose()) * SpMat(d.asDiagonal() * e);
  return std::sqrt(pencil_max_eig(b, sys.Mp()));
}

double measure_c_p(const FeSystem& sys) {
  const std::vector<int> fs = sys.free_velocity_scalar_dofs();
  const SpMat r = row_selection(fs, sys.n_us());
  const SpMat kff = r * sys.Ks() * r.transpose();
  const SpMat mff = r * sys.Ms() * r.transpose();
  return std::sqrt(pencil_max_eig(mff, kff));
}

double measure_inf_sup_alpha(const FeSystem& sys, const VectorXd& tau_elem) {
  const std::vector<int> free = free_velocity_vector_dofs(sys);
  const SpMat r = row_selection(free, sys.n_u());
  const SpMat rt = r.transpose();
  const SpMat kff = r * sys.K() * rt;
  Eigen::SimplicialLDLT<SpMat> ldlt(kff);
  check_numeric(ldlt.info() == Eigen::Success, "inf-sup: velocity factorization failed");

  const SpMat df = sys.D() * rt;  // np x nf
  const SpMat dft = SpMat(df.transpose());
  const int np = sys.n_p();
  MatrixXd b = MatrixXd(sys.lps_matrix(tau_elem));
  // b += D K^{-1} D^T column by column (keeps memory at O(np^2))
  for (int j = 0; j < np; ++j) {
    const VectorXd y = ldlt.solve(VectorXd(dft.col(j)));
    b.col(j) += df * y;
  }
  b = 0.5 * (b + b.transpose().eval());

  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(b, MatrixXd(sys.Mp()));
  check_numeric(ges.info() == Eigen::Success, "inf-sup: eigensolve failed");
  const VectorXd& ev = ges.eigenvalues();
  // The constant pressure spans the kernel of both D^T (on free dofs) and
  // S; it must show up as the single (near-)zero eigenvalue.
  check_numeric(ev.size() >= 2, "inf-sup: pressure space too small");
  check_numeric(std::abs(ev(0)) < 1e-10 * std::max(1.0, std::abs(ev(ev.size() - 1))) &&
                    ev(1) > 0,
                "inf-sup: unexpected spectrum near zero");
  return std::sqrt(ev(1));
}

}  // namespace vmsrb
