#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tcrf/hermitian_field.hpp"

using namespace tcrf;
using std::numbers::pi;

namespace {

HolonomySpec negation(int n) {
  HolonomySpec s;
  const int d = 2 * n;
  s.R.assign(d * d, 0);
  for (int a = 0; a < d; ++a) s.R[a * d + a] = -1;
  s.b.assign(d, Rational{});
  return s;
}

// z ↦ i z on the first coordinate: (x, y) ↦ (−y, x).
HolonomySpec quarter_turn(int n) {
  HolonomySpec s;
  const int d = 2 * n;
  s.R.assign(d * d, 0);
  for (int a = 0; a < d; ++a) s.R[a * d + a] = 1;
  s.R[0] = 0;
  s.R[1] = -1;
  s.R[d] = 1;
  s.R[d + 1] = 0;
  s.b.assign(d, Rational{});
  return s;
}

ModelPtr odd_model(int n, int N) { return TransverseModel::create(n, N, {negation(n)}); }

double max_abs_diff(const RealArray& a, const RealArray& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Sixth-order central second difference of an analytic function along one axis.
double second_difference(const std::function<double(double)>& f, double x, double h) {
  static const double c[] = {1.0 / 90, -3.0 / 20, 3.0 / 2, -49.0 / 18, 3.0 / 2, -3.0 / 20, 1.0 / 90};
  double s = 0.0;
  for (int m = -3; m <= 3; ++m) s += c[m + 3] * f(x + m * h);
  return s / (h * h);
}

}  // namespace

TEST(TransverseModel, RejectsInvalidConfigurations) {
  EXPECT_THROW(TransverseModel::create(0, 16), ConfigError);
  EXPECT_THROW(TransverseModel::create(1, 6), ConfigError);
  EXPECT_THROW(TransverseModel::create(1, 15), ConfigError);
  EXPECT_THROW(TransverseModel::create(1, 16, {}, 1, 0.0), ConfigError);
  HolonomySpec shear = negation(1);
  shear.R = {1, 1, 0, 1};
  EXPECT_THROW(TransverseModel::create(1, 16, {shear}), ConfigError);
  HolonomySpec conj = negation(1);
  conj.R = {1, 0, 0, -1};  // z ↦ z̄ is orthogonal but antiholomorphic
  EXPECT_THROW(TransverseModel::create(1, 16, {conj}), ConfigError);
  HolonomySpec third = negation(1);
  third.b = {Rational{1, 3}, Rational{}};
  EXPECT_THROW(TransverseModel::create(1, 16, {third}), ConfigError);
  third.b = {Rational{1, 4}, Rational{}};
  EXPECT_NO_THROW(TransverseModel::create(1, 16, {third}));
}

TEST(TransverseModel, GroupClosure) {
  EXPECT_EQ(odd_model(1, 16)->group().size(), 2u);
  EXPECT_EQ(TransverseModel::create(1, 16, {quarter_turn(1)})->group().size(), 4u);
  HolonomySpec half = negation(1);
  half.R = {1, 0, 0, 1};
  half.b = {Rational{1, 2}, Rational{}};
  EXPECT_EQ(TransverseModel::create(1, 16, {half, quarter_turn(1)})->group().size(), 16u);
}

TEST(TransverseModel, JsonErrorsCarryPointers) {
  nlohmann::json j = {{"n", 1}, {"N", 16}, {"holonomy", {{{"U", {{1, 1}, {0, 1}}}, {"b", {0, 0}}}}}};
  try {
    model_from_json(j, "/model");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.pointer(), "/model/holonomy/0/U");
  }
  j["holonomy"][0]["U"] = {{-1, 0}, {0, -1}};
  j["holonomy"][0]["b"] = {"1/3", 0};
  try {
    model_from_json(j, "/model");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.pointer(), "/model/holonomy/0/b/0");
  }
  j["holonomy"][0]["b"] = {"1/2", 0};
  EXPECT_EQ(model_from_json(j)->group().size(), 2u);
}

TEST(ProjectBasic, Examples) {
  auto m = odd_model(1, 32);
  auto even = BasicField::sample(m, [](auto x) { return std::cos(2 * pi * x[0]); });
  EXPECT_LE(max_abs_diff(project_basic(even).values, even.values), 1e-15);
  auto odd = BasicField::sample(m, [](auto x) { return std::sin(2 * pi * x[0]); });
  EXPECT_LE(sup_norm(project_basic(odd)), 1e-15);
  auto mixed = BasicField::sample(m, [](auto x) { return std::cos(2 * pi * x[0]) + std::sin(2 * pi * x[1]); });
  EXPECT_LE(max_abs_diff(project_basic(mixed).values, even.values), 1e-15);
}

TEST(ProjectBasic, IdempotentSelfAdjointLinear) {
  HolonomySpec shift = quarter_turn(2);
  shift.b = {Rational{1, 4}, Rational{}, Rational{1, 2}, Rational{}};
  auto m = TransverseModel::create(2, 8, {shift, negation(2)});
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  auto random_field = [&] {
    BasicField f = BasicField::zeros(m);
    for (auto& v : f.values) v = normal(rng);
    return f;
  };
  for (int trial = 0; trial < 5; ++trial) {
    BasicField f = random_field(), g = random_field();
    BasicField pf = project_basic(f);
    EXPECT_LE(max_abs_diff(project_basic(pf).values, pf.values), 1e-12);
    EXPECT_NEAR(inner(pf, g), inner(f, project_basic(g)), 1e-12);
    BasicField sum = project_basic(f + 2.0 * g);
    BasicField parts = pf + 2.0 * project_basic(g);
    EXPECT_LE(max_abs_diff(sum.values, parts.values), 1e-12);
    EXPECT_LE(basicness_defect(pf), 1e-12);
  }
}

TEST(Dolbeault, ConstantHasNoDerivatives) {
  auto m = TransverseModel::create(2, 8);
  auto c = BasicField::constant(m, 3.5);
  EXPECT_LE(sup_norm(del_B(delbar_B(c))), 1e-13);
  EXPECT_LE(sup_norm(ddbar(c)), 1e-13);
}

TEST(Dolbeault, DdbarMatchesFiniteDifferences) {
  auto m = TransverseModel::create(1, 64);
  auto f = BasicField::sample(m, [](auto x) { return 0.1 * std::cos(2 * pi * x[0]); });
  auto form = del_B(delbar_B(f));
  const ComplexArray* c = form.find(1, 1);
  ASSERT_NE(c, nullptr);
  const double h = 5e-3;
  double err = 0.0;
  for (std::size_t i = 0; i < m->size(); ++i) {
    const double x = m->lattice().coordinate(i, 0), y = m->lattice().coordinate(i, 1);
    const auto fx = [y](double s) { return 0.1 * std::cos(2 * pi * s) + 0.0 * y; };
    const auto fy = [x](double s) { return 0.1 * std::cos(2 * pi * x) + 0.0 * s; };
    const double quarter_laplacian = 0.25 * (second_difference(fx, x, h) + second_difference(fy, y, h));
    err = std::max(err, std::abs((*c)[i] - quarter_laplacian));
    // closed form −0.1π² cos 2πx
    EXPECT_NEAR((*c)[i].real(), -0.1 * pi * pi * std::cos(2 * pi * x), 1e-12);
  }
  EXPECT_LE(err, 1e-10);
}

TEST(Dolbeault, SquaresVanishAndAnticommute) {
  std::mt19937_64 rng(11);
  for (int n : {1, 2}) {
    auto m = TransverseModel::create(n, n == 1 ? 32 : 12, {negation(n)});
    for (int trial = 0; trial < 3; ++trial) {
      BasicField f = random_band_limited(m, 3, 0.05, rng);
      EXPECT_LE(sup_norm(d_B(d_B(f))), 1e-12);
      EXPECT_LE(sup_norm(del_B(del_B(f))), 1e-12);
      EXPECT_LE(sup_norm(delbar_B(delbar_B(f))), 1e-12);
      EXPECT_LE(sup_norm(del_B(delbar_B(f)) + delbar_B(del_B(f))), 1e-12);
      BasicForm a = random_form(m, 1, 0, 3, 0.05, rng);
      EXPECT_LE(sup_norm(d_B(d_B(a))), 1e-12);
      EXPECT_LE(sup_norm(del_B(delbar_B(a)) + delbar_B(del_B(a))), 1e-12);
    }
  }
}

TEST(Dolbeault, CommutesWithProjection) {
  std::mt19937_64 rng(3);
  auto m = TransverseModel::create(2, 8, {quarter_turn(2)});
  BasicForm a(m, 1);
  for (IndexMask j : {1u, 2u}) {
    auto& c = a.component(j, 0);
    BasicField re = random_band_limited(m, 2, 1.0, rng, false);
    BasicField im = random_band_limited(m, 2, 1.0, rng, false);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = cplx(re.values[i], im.values[i]);
  }
  BasicForm lhs = d_B(project_basic(a));
  BasicForm rhs = project_basic(d_B(a));
  EXPECT_LE(sup_norm(lhs - rhs), 1e-12);
  EXPECT_LE(basicness_defect(lhs), 1e-12);
}

TEST(Integrate, Examples) {
  auto m = TransverseModel::create(1, 32);
  auto one = BasicField::constant(m, 1.0);
  BasicForm vol = BasicForm::monomial(one, 1, 1, cplx(0.0, 1.0));
  EXPECT_NEAR(std::abs(integrate(0.7 * vol) - cplx(1.4)), 0.0, 1e-13);
  auto c = BasicField::sample(m, [](auto x) { return std::cos(2 * pi * x[0]); });
  EXPECT_NEAR(std::abs(integrate(BasicForm::monomial(c, 1, 1, cplx(0.0, 1.0)))), 0.0, 1e-15);

  auto e = BasicField::sample(m, [](auto x) { return std::exp(0.1 * std::cos(2 * pi * x[0])); });
  const cplx value = integrate(BasicForm::monomial(e, 1, 1, cplx(0.0, 1.0)));
  // composite Simpson on [0, 1] with 20000 panels
  const int panels = 20000;
  double simpson = 0.0;
  for (int k = 0; k <= panels; ++k) {
    const double w = (k == 0 || k == panels) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    simpson += w * std::exp(0.1 * std::cos(2 * pi * k / panels));
  }
  simpson /= 3.0 * panels;
  EXPECT_NEAR(simpson, std::cyl_bessel_i(0.0, 0.1), 1e-13);
  EXPECT_NEAR(value.real(), 2.0 * simpson, 1e-13);
  EXPECT_NEAR(value.imag(), 0.0, 1e-15);
  EXPECT_NEAR(value.real(), 2.0050, 1e-4);

  auto m2 = TransverseModel::create(2, 8, {}, 1, 3.0);
  // (i dz1∧dz̄1)∧(i dz2∧dz̄2) = 4 dx1dy1dx2dy2
  BasicForm w1 = BasicForm::monomial(BasicField::constant(m2, 1.0), 1, 1, cplx(0.0, 1.0));
  BasicForm w2 = BasicForm::monomial(BasicField::constant(m2, 1.0), 2, 2, cplx(0.0, 1.0));
  EXPECT_NEAR(std::abs(integrate(wedge(w1, w2)) - cplx(12.0)), 0.0, 1e-13);
  EXPECT_THROW(integrate(w1), ContractViolation);
}

TEST(IntegrationByParts, Examples) {
  auto m = TransverseModel::create(1, 32);
  auto a = BasicForm::scalar(BasicField::sample(m, [](auto x) { return std::cos(2 * pi * x[0]); }));
  auto b = BasicForm::monomial(BasicField::sample(m, [](auto x) { return std::sin(2 * pi * x[1]); }), 1, 0);
  auto r = check_integration_by_parts(a, b);
  EXPECT_LE(r.residual, 1e-10);
  auto c = BasicForm::scalar(BasicField::constant(m, 2.0));
  auto rc = check_integration_by_parts(c, b);
  EXPECT_LE(std::abs(rc.lhs), 1e-15);
  EXPECT_LE(std::abs(rc.rhs), 1e-12);
  EXPECT_THROW(check_integration_by_parts(a, a), ContractViolation);
}

TEST(IntegrationByParts, RandomPairsTwoDimensions) {
  std::mt19937_64 rng(5);
  auto m = TransverseModel::create(2, 12, {negation(2)}, 2, 1.5);
  for (int trial = 0; trial < 3; ++trial) {
    BasicForm a = random_form(m, 1, 0, 3, 1.0, rng);
    BasicForm b = random_form(m, 1, 1, 3, 1.0, rng);
    auto r = check_integration_by_parts(a, b);
    EXPECT_LE(r.relative, 1e-9) << r.residual;
    EXPECT_GT(std::abs(r.lhs), 1e-6);
  }
}

TEST(DdbarPotential, Examples) {
  auto m = TransverseModel::create(1, 32);
  HermitianField zero(m);
  EXPECT_LE(sup_norm(solve_ddbar_potential(zero)), 1e-15);
  auto f = BasicField::sample(m, [](auto x) { return 0.2 * std::cos(2 * pi * x[0]); });
  auto psi = solve_ddbar_potential(ddbar(f));
  EXPECT_LE(max_abs_diff(psi.values, f.values), 1e-10);
  auto one = HermitianField::constant(m, Eigen::MatrixXcd::Identity(1, 1));
  try {
    solve_ddbar_potential(one);
    FAIL() << "expected NotExact";
  } catch (const NotExact& e) {
    ASSERT_EQ(e.harmonic().size(), 1u);
    EXPECT_NEAR(std::abs(e.harmonic()[0] - cplx(1.0)), 0.0, 1e-14);
  }
}

TEST(DdbarPotential, RoundTripRandom) {
  std::mt19937_64 rng(9);
  for (int n : {1, 2}) {
    auto m = TransverseModel::create(n, n == 1 ? 32 : 12, {negation(n)});
    for (int trial = 0; trial < 3; ++trial) {
      BasicField f = random_band_limited(m, 3, 0.3, rng);
      BasicField psi = solve_ddbar_potential(ddbar(f));
      BasicField expect = f;
      for (auto& v : expect.values) v -= mean(f);
      EXPECT_LE(max_abs_diff(psi.values, expect.values), 1e-10);
    }
  }
}

TEST(DdbarPotential, FormRoundTrip) {
  std::mt19937_64 rng(2);
  auto m = TransverseModel::create(2, 8);
  BasicField f = random_band_limited(m, 2, 0.3, rng);
  HermitianField h = ddbar(f);
  HermitianField back = from_form(to_form(h));
  EXPECT_LE(sup_norm(back - h), 1e-15);
  // i∂∂̄f as a form equals i·∂(∂̄f)
  BasicForm direct = cplx(0.0, 1.0) * del_B(delbar_B(f));
  EXPECT_LE(sup_norm(direct - to_form(h)), 1e-11);
  EXPECT_LE(closedness_defect(h), 1e-11);
}
