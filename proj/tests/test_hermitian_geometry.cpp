#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tcrf/hermitian_geometry.hpp"

using namespace tcrf;
using std::numbers::pi;

namespace {

Eigen::MatrixXcd diag(std::initializer_list<double> d) {
  Eigen::VectorXcd v(d.size());
  int i = 0;
  for (double x : d) v(i++) = x;
  return v.asDiagonal();
}

HolonomySpec negation(int n) {
  HolonomySpec s;
  const int d = 2 * n;
  s.R.assign(d * d, 0);
  for (int a = 0; a < d; ++a) s.R[a * d + a] = -1;
  s.b.assign(d, Rational{});
  return s;
}

BasicField cos_x(const ModelPtr& m, double amplitude, int axis = 0) {
  return BasicField::sample(m, [=](auto x) { return amplitude * std::cos(2 * pi * x[axis]); });
}

// n=2 metric g = A + small smooth Hermitian perturbation with off-diagonal terms.
HermitianMetric perturbed_metric(const ModelPtr& m) {
  HermitianField g = HermitianField::constant(m, diag({1.0, 2.0}));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x1 = m->lattice().coordinate(i, 0), y1 = m->lattice().coordinate(i, 1);
    const double x2 = m->lattice().coordinate(i, 2), y2 = m->lattice().coordinate(i, 3);
    g.diag(0)[i] += 0.1 * std::cos(2 * pi * x1) * std::cos(2 * pi * y2);
    g.diag(1)[i] += 0.15 * std::cos(2 * pi * (x2 + y1));
    g.off(0, 1)[i] = cplx(0.05 * std::cos(2 * pi * x1), 0.05 * std::cos(2 * pi * (y1 - x2)));
  }
  return HermitianMetric(std::move(g));
}

}  // namespace

TEST(Metric, RejectsNonPositive) {
  auto m = TransverseModel::create(2, 8);
  EXPECT_THROW(HermitianMetric::flat(m, diag({1.0, -1.0})), PositivityLoss);
  try {
    HermitianField g = HermitianField::constant(m, diag({1.0, 1.0}));
    g.diag(1)[37] = -0.5;
    HermitianMetric bad(g);
    FAIL();
  } catch (const PositivityLoss& e) {
    EXPECT_EQ(e.point(), 37u);
    EXPECT_NEAR(e.eigenvalue(), -0.5, 1e-15);
  }
}

TEST(ChernRicci, Examples) {
  auto m1 = TransverseModel::create(1, 32);
  EXPECT_LE(sup_norm(chern_ricci(HermitianMetric::flat(m1, diag({3.0}))).rho), 1e-13);

  auto g = HermitianMetric::conformal(cos_x(m1, 0.1));
  const auto rho = chern_ricci(g).rho;
  double err = 0.0;
  for (std::size_t i = 0; i < m1->size(); ++i)
    err = std::max(err, std::abs(rho.diag(0)[i] - 0.1 * pi * pi * std::cos(2 * pi * m1->lattice().coordinate(i, 0))));
  EXPECT_LE(err, 1e-12);

  auto m2 = TransverseModel::create(2, 12);
  BasicField f = BasicField::sample(m2, [](auto x) { return 0.3 * std::sin(2 * pi * (x[0] + x[3])); });
  BasicField minus_f = -1.0 * f;
  EXPECT_LE(sup_norm(chern_ricci(HermitianMetric::diagonal({f, minus_f})).rho), 1e-12);
}

TEST(ChernRicci, ConformalLaw) {
  std::mt19937_64 rng(4);
  auto m = TransverseModel::create(1, 32, {negation(1)});
  auto g = HermitianMetric::conformal(random_band_limited(m, 3, 0.05, rng));
  BasicField f = random_band_limited(m, 3, 0.05, rng);
  HermitianField scaled = g.field();
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled.diag(0)[i] *= std::exp(f.values[i]);
  HermitianField lhs = chern_ricci(HermitianMetric(scaled)).rho;
  HermitianField rhs = chern_ricci(g).rho - ddbar(f);
  EXPECT_LE(sup_norm(lhs - rhs), 1e-10);
  EXPECT_LE(basicness_defect(lhs), 1e-12);
}

TEST(ChernRicci, ClosedAndExact) {
  auto m = TransverseModel::create(2, 12);
  const auto rho = chern_ricci(perturbed_metric(m)).rho;
  EXPECT_LE(closedness_defect(rho), 1e-10);
  EXPECT_TRUE(is_zero_class(bott_chern_class(rho)));
  EXPECT_LE(bott_chern_class(rho).matrix.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BottChern, Examples) {
  std::mt19937_64 rng(8);
  auto m = TransverseModel::create(2, 8);
  BasicField psi = random_band_limited(m, 2, 0.5, rng);
  EXPECT_LE(bott_chern_class(ddbar(psi)).matrix.cwiseAbs().maxCoeff(), 1e-12);
  auto c = bott_chern_class(HermitianField::constant(m, diag({1.0, 2.0})));
  EXPECT_LE((c.matrix - diag({1.0, 2.0})).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(is_positive_class(c));
  EXPECT_FALSE(is_negative_class(c));

  // adding an exact form leaves the class unchanged
  HermitianField sigma = HermitianField::constant(m, diag({1.0, 2.0})) + ddbar(psi);
  EXPECT_TRUE(same_class(bott_chern_class(sigma), c, 1e-12));

  BottChernClass zero{Eigen::MatrixXcd::Zero(2, 2)};
  EXPECT_TRUE(is_zero_class(zero));
  BottChernClass split{diag({1.0, -1.0})};
  EXPECT_FALSE(is_positive_class(split));
  EXPECT_FALSE(is_negative_class(split));
  EXPECT_TRUE(is_negative_class(BottChernClass{diag({-1.0, -3.0})}));
}

TEST(BottChern, RejectsNonClosed) {
  auto m = TransverseModel::create(1, 16);
  // f(x) i dz∧dz̄ is closed in complex dimension one; use n = 2 instead.
  auto m2 = TransverseModel::create(2, 8);
  HermitianField h(m2);
  for (std::size_t i = 0; i < h.size(); ++i) h.diag(0)[i] = std::cos(2 * pi * m2->lattice().coordinate(i, 2));
  EXPECT_THROW(bott_chern_class(h), NotClosed);
  EXPECT_NO_THROW(bott_chern_class(HermitianField::scaled_identity(cos_x(m, 1.0))));
}

TEST(Gauduchon, OneDimensionIsTrivial) {
  auto m = TransverseModel::create(1, 16);
  auto res = gauduchon_factor(HermitianMetric::conformal(cos_x(m, 0.2)));
  EXPECT_EQ(sup_norm(res.u), 0.0);
}

TEST(Gauduchon, ConstantMetricIsAlreadyGauduchon) {
  auto m = TransverseModel::create(2, 8);
  Eigen::MatrixXcd A = diag({1.0, 2.0});
  A(0, 1) = cplx(0.3, 0.2);
  A(1, 0) = std::conj(A(0, 1));
  auto res = gauduchon_factor(HermitianMetric::flat(m, A));
  EXPECT_LE(sup_norm(res.u), 1e-14);
  EXPECT_LE(res.residual, 1e-12);
}

TEST(Gauduchon, ConformallyFlatExample) {
  auto m = TransverseModel::create(2, 16);
  BasicField f = BasicField::sample(m, [](auto x) { return std::log(1.0 + 0.1 * std::cos(2 * pi * x[0])); });
  auto g = HermitianMetric::conformal(f);
  auto res = gauduchon_factor(g);
  EXPECT_LE(res.residual, 1e-8);
  EXPECT_GT(res.min_v, 0.0);
  EXPECT_GT(sup_norm(res.u), 1e-3);
  // v (1 + 0.1 cos 2πx₁) is constant for this metric
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < m->size(); ++i) {
    const double p = res.v.values[i] * std::exp(f.values[i]);
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  EXPECT_LE(hi - lo, 1e-9);
}

TEST(Gauduchon, GeneralMetricUniqueUpToScale) {
  auto m = TransverseModel::create(2, 12);
  auto g = perturbed_metric(m);
  auto a = gauduchon_factor(g);
  EXPECT_LE(a.residual, 1e-8);
  std::mt19937_64 rng(6);
  BasicField start = random_band_limited(m, 3, 0.2, rng);
  GauduchonOptions opt;
  opt.initial = &start;
  auto b = gauduchon_factor(g, opt);
  EXPECT_LE(b.residual, 1e-8);
  double diff = 0.0;
  const double ma = mean(a.v), mb = mean(b.v);
  for (std::size_t i = 0; i < m->size(); ++i) diff = std::max(diff, std::abs(a.v.values[i] / ma - b.v.values[i] / mb));
  EXPECT_LE(diff, 1e-6);
}

TEST(Gauduchon, ThreeDimensions) {
  auto m = TransverseModel::create(3, 8);
  BasicField f = BasicField::sample(m, [](auto x) { return 0.1 * std::cos(2 * pi * x[2]) * std::cos(2 * pi * x[5]); });
  auto g = HermitianMetric::conformal(f, diag({1.0, 1.5, 2.0}));
  auto res = gauduchon_factor(g);
  EXPECT_LE(res.residual, 1e-8);
  EXPECT_GT(res.min_v, 0.0);
}

TEST(ChernConnection, MatchesChernRicci) {
  auto m0 = TransverseModel::create(2, 8);
  EXPECT_LE(sup_norm(chern_connection_curvature(HermitianMetric::flat(m0, diag({1.0, 2.0})))), 1e-13);

  auto m1 = TransverseModel::create(1, 32);
  auto g1 = HermitianMetric::conformal(cos_x(m1, 0.1));
  EXPECT_LE(sup_norm(chern_connection_curvature(g1) - chern_ricci(g1).rho), 1e-10);

  auto m2 = TransverseModel::create(2, 16);
  BasicField f1 = BasicField::sample(m2, [](auto x) { return 0.1 * std::cos(2 * pi * x[0]) + 0.05 * std::sin(2 * pi * x[3]); });
  BasicField f2 = BasicField::sample(m2, [](auto x) { return 0.1 * std::cos(2 * pi * (x[1] + x[2])); });
  auto g2 = HermitianMetric::diagonal({f1, f2});
  EXPECT_LE(sup_norm(chern_connection_curvature(g2) - chern_ricci(g2).rho), 1e-9);

  auto m3 = TransverseModel::create(2, 20);
  auto g3 = perturbed_metric(m3);
  EXPECT_LE(sup_norm(chern_connection_curvature(g3) - chern_ricci(g3).rho), 1e-9);
}
