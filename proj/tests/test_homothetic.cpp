#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "qh/qh.hpp"

namespace {

using namespace qh;

const PotentialParams kManev3{1.0, 3.0, 1.0, 1.0};
const MassSystem kUnit({1.0, 1.0, 1.0});

Points<2> unit_equilateral(const MassSystem& ms) { return equilateral_points(ms, equilateral_side(ms, 1.0), +1); }

TEST(Homothetic, Admissibility) {
  EXPECT_TRUE(is_homothetic_admissible(unit_equilateral(kUnit), kUnit, kManev3));
  const MassSystem ms({1.0, 2.0, 3.0});
  const auto cc = solve_collinear_ordering(Ordering({0, 1, 2}), {ms, kManev3});
  EXPECT_FALSE(is_homothetic_admissible(cc.config.positions(), ms, kManev3));
  EXPECT_THROW(plane_field(0.5, 0.1, cc.config.positions(), ms, kManev3, -1.0), AdmissibilityError);
  EXPECT_THROW(heteroclinic_orbit(cc.config.positions(), ms, kManev3, -1.0), AdmissibilityError);
  const MassSystem sym({1.0, 2.0, 1.0});
  const auto line = solve_collinear_ordering(Ordering({0, 1, 2}), {sym, kManev3});
  EXPECT_TRUE(is_homothetic_admissible(line.config.positions(), sym, kManev3));
}

TEST(Homothetic, PlaneFieldAgreesWithUnreducedEquation) {
  const Points<2> s0 = unit_equilateral(kUnit);
  for (double h : {-2.0, -1.0, -0.1})
    for (double rho : {1e-3, 0.1, 0.5}) {
      const double v2 = energy_curve_v2(rho, s0, kUnit, kManev3, h);
      if (v2 < 0.0) continue;
      for (double sign : {1.0, -1.0}) {
        const double v = sign * std::sqrt(v2);
        const PlaneRates r = plane_field(rho, v, s0, kUnit, kManev3, h);
        EXPECT_NEAR(r.rho, rho * v, 1e-15);
        EXPECT_NEAR(r.v, plane_v_rate_unreduced(rho, v, s0, kUnit, kManev3), 1e-12);
      }
    }
}

TEST(Homothetic, PlaneIsInvariantUnderTheFullField) {
  const Points<2> s0 = unit_equilateral(kUnit);
  McGeheeState<2> st{0.3, s0, 0.7, Points<2>::Zero(2, 3)};
  const McGeheeRates<2> d = vector_field(st, kUnit, kManev3);
  EXPECT_LT(d.s.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(d.u.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Homothetic, HeteroclinicOrbitForUnitMasses) {
  const Points<2> s0 = unit_equilateral(kUnit);
  const PlaneOrbit orb = heteroclinic_orbit(s0, kUnit, kManev3, -1.0);
  const double vc = std::sqrt(2.0 * potential_V(s0, kUnit, kManev3));
  EXPECT_LT(orb.K_drift, 1e-9);
  EXPECT_NEAR(orb.samples.front().rho, 1e-8, 1e-20);
  EXPECT_NEAR(orb.samples.back().rho, 1e-8, 1e-18);
  EXPECT_NEAR(orb.v_start, vc, 1e-6);
  EXPECT_NEAR(orb.v_end, -vc, 1e-6);
  EXPECT_NEAR(orb.rho_max, orb.rho_max_bisection, 1e-6);
  EXPECT_NEAR(orb.K, vc * vc / 2.0, 1e-15);
  EXPECT_LT(std::abs(energy_curve_v2(orb.rho_max_bisection, s0, kUnit, kManev3, -1.0)), 1e-12);
  for (const auto& smp : orb.samples) EXPECT_LE(smp.rho, orb.rho_max_bisection * (1.0 + 1e-12));
}

TEST(Homothetic, OrbitIsSymmetricAboutTheTurn) {
  const Points<2> s0 = unit_equilateral(kUnit);
  const PlaneOrbit orb = heteroclinic_orbit(s0, kUnit, kManev3, -0.5);
  const double span = std::min(orb.tau_max, orb.trajectory.final_time() - orb.tau_max);
  for (double f : {0.1, 0.3, 0.6, 0.9}) {
    const State a = orb.trajectory.at(orb.tau_max - f * span);
    const State b = orb.trajectory.at(orb.tau_max + f * span);
    EXPECT_NEAR(a[0], b[0], 1e-7 * std::max(a[0], 1e-8));
    EXPECT_NEAR(a[1], -b[1], 1e-6);
  }
}

TEST(Homothetic, RandomMassesAndEnergies) {
  auto g = oracle::rng(51);
  std::uniform_real_distribution<double> hd(-3.0, -0.05);
  for (int trial = 0; trial < 5; ++trial) {
    const MassSystem ms(oracle::random_masses(g, 3));
    const Points<2> s0 = unit_equilateral(ms);
    const double h = hd(g);
    const PlaneOrbit orb = heteroclinic_orbit(s0, ms, kManev3, h);
    EXPECT_LT(orb.K_drift, 1e-9 * orb.K) << "K = " << orb.K;
    EXPECT_NEAR(orb.rho_max, orb.rho_max_bisection, 1e-6 * orb.rho_max_bisection);
    EXPECT_EQ(energy_curve_sign_changes(s0, ms, kManev3, h), 1);
  }
}

TEST(Homothetic, PositiveEnergyHasNoConnection) {
  const Points<2> s0 = unit_equilateral(kUnit);
  const double floor = 2.0 * potential_V(s0, kUnit, kManev3);
  EXPECT_EQ(energy_curve_sign_changes(s0, kUnit, kManev3, 1.0), 0);
  for (int k = 0; k <= 400; ++k) {
    const double rho = std::pow(10.0, -8.0 + 16.0 * k / 400.0);
    EXPECT_GE(energy_curve_v2(rho, s0, kUnit, kManev3, 1.0), floor);
  }
  EXPECT_THROW(rho_max_bisection(s0, kUnit, kManev3, 1.0), EnergySignError);
  EXPECT_THROW(rho_max_bisection(s0, kUnit, kManev3, 0.0), EnergySignError);
  EXPECT_THROW(heteroclinic_orbit(s0, kUnit, kManev3, 1.0), EnergySignError);
}

TEST(Homothetic, LiftedSamplesAreHomotheticSolutions) {
  const Points<2> s0 = unit_equilateral(kUnit);
  const double h = -1.0;
  const PlaneOrbit orb = heteroclinic_orbit(s0, kUnit, kManev3, h);
  for (std::size_t k = 0; k < orb.samples.size(); k += std::max<std::size_t>(1, orb.samples.size() / 20)) {
    const auto& smp = orb.samples[k];
    if (smp.rho < 1e-3) continue;
    const PhaseState<2> ps = lift_plane_sample(smp, s0, kUnit, kManev3);
    EXPECT_NEAR(hamiltonian(ps, kUnit, kManev3), h, 1e-8 * std::pow(smp.rho, -3.0));
    EXPECT_NEAR(angular_momentum(ps, kUnit), 0.0, 1e-12);
    EXPECT_LT((ps.config.positions() - smp.rho * s0).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Homothetic, FullFieldKeepsTheShapeOfTheEquilateral) {
  const Points<2> s0 = unit_equilateral(kUnit);
  const ShapeDrift d = shape_drift(s0, kUnit, kManev3, -1.0, 0.5, 0.3);
  EXPECT_LT(d.max_deviation, 1e-10);
  EXPECT_TRUE(std::isnan(d.tau_exceeded));
}

TEST(Homothetic, NonSimultaneousShapeDrifts) {
  const MassSystem ms({1.0, 2.0, 3.0});
  for (const auto& ord : Ordering::all(3)) {
    const auto cc = solve_collinear_ordering(ord, {ms, kManev3});
    const Points<2> s0 = cc.config.positions();
    const double rho0 = 1.0;
    // released from rest
    const double h = -(potential_W(s0, ms, kManev3) + potential_V(s0, ms, kManev3));
    const ShapeDrift d = shape_drift(s0, ms, kManev3, h, rho0, 5.0);
    EXPECT_GT(d.max_deviation, 1e-4) << ord.str();
    EXPECT_FALSE(std::isnan(d.tau_exceeded));
  }
}

TEST(Homothetic, Preconditions) {
  const Points<2> s0 = unit_equilateral(kUnit);
  EXPECT_THROW(heteroclinic_orbit(s0, kUnit, {2.0, 3.0}, -1.0), ManevOnlyError);
  EXPECT_THROW(heteroclinic_orbit(s0, kUnit, kManev3, -1.0, 0.0), ValidationError);
  EXPECT_THROW(shape_drift(s0, kUnit, kManev3, -10.0, 5.0, 1.0), EnergySignError);
}

}  // namespace
