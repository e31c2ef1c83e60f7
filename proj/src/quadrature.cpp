#include "vmsrb/quadrature.hpp"

namespace vmsrb {

namespace {

QuadratureRule make_rule(int degree, std::initializer_list<std::array<double, 3>> rows) {
  // rows: (lambda2, lambda3, weight) with weights normalized to sum 1
  QuadratureRule r;
  r.degree = degree;
  const int n = static_cast<int>(rows.size());
  r.points.resize(n, 2);
  r.weights.resize(n);
  int i = 0;
  for (const auto& row : rows) {
    r.points(i, 0) = row[0];
    r.points(i, 1) = row[1];
    r.weights[i] = row[2];
    ++i;
  }
  // exactify the partition of unity, then scale to reference area 1/2
  r.weights *= 1.0 / r.weights.sum();
  r.weights *= 0.5;
  return r;
}

}  // namespace

QuadratureRule triangle_rule(int degree) {
  require(degree >= 0, "triangle_rule: negative degree");
  if (degree <= 1) {
    return make_rule(1, {{1.0 / 3.0, 1.0 / 3.0, 1.0}});
  }
  if (degree == 2) {
    return make_rule(2, {{1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0},
                         {2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0},
                         {1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0}});
  }
  if (degree <= 5) {
    // 7-point degree-5 rule
    const double a1 = 0.059715871789770, b1 = 0.470142064105115, w1 = 0.132394152788506;
    const double a2 = 0.797426985353087, b2 = 0.101286507323456, w2 = 0.125939180544827;
    return make_rule(5, {{1.0 / 3.0, 1.0 / 3.0, 0.225},
                         {a1, b1, w1},
                         {b1, a1, w1},
                         {b1, b1, w1},
                         {a2, b2, w2},
                         {b2, a2, w2},
                         {b2, b2, w2}});
  }
  if (degree == 6) {
    // Dunavant degree-6 12-point rule
    const double a1 = 0.873821971016996, b1 = 0.063089014491502, w1 = 0.050844906370207;
    const double a2 = 0.501426509658179, b2 = 0.249286745170910, w2 = 0.116786275726379;
    const double a3 = 0.636502499121399, b3 = 0.310352451033785, c3 = 0.053145049844816;
    const double w3 = 0.082851075618374;
    return make_rule(6, {{a1, b1, w1},
                         {b1, a1, w1},
                         {b1, b1, w1},
                         {a2, b2, w2},
                         {b2, a2, w2},
                         {b2, b2, w2},
                         {a3, b3, w3},
                         {a3, c3, w3},
                         {b3, a3, w3},
                         {b3, c3, w3},
                         {c3, a3, w3},
                         {c3, b3, w3}});
  }
  throw ConfigError("triangle_rule: no shipped rule of exactness degree " + std::to_string(degree));
}

}  // namespace vmsrb
