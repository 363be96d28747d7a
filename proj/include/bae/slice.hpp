#pragma once

// Steady single-phase Darcy flow + heat transport in a rectangular vertical
// slice, discretized with cell-centred finite volumes. Stands in for a full
// multiphase geothermal simulator: it keeps the permeability -> temperature
// map and gives a genuine fine/coarse discretization gap.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "bae/forward.hpp"

namespace bae::slice {

/// Axis-aligned region [x_min, x_max) x [depth_min, depth_max) in metres.
/// Regions are defined in physical coordinates, so the same layout can be
/// laid over any grid.
struct RockRegion {
  std::string name;
  double x_min = 0, x_max = 0;
  double depth_min = 0, depth_max = 0;

  bool contains(double x, double depth) const {
    return x >= x_min && x < x_max && depth >= depth_min && depth < depth_max;
  }
};

struct Well {
  double x = 0;
  std::vector<double> depths;  // shallow to deep
};

struct SliceConfig {
  double width = 2000.0;  // m
  double depth = 1600.0;  // m
  int nx = 40;
  int nz = 50;
  std::vector<RockRegion> regions;

  double top_temperature = 15.0;        // degC
  double basal_heat_flux = 0.080;       // W/m^2
  double source_x_min = 0.0;            // m; empty interval means no source
  double source_x_max = 500.0;          // m
  double source_mass_flux = 7.5e-5;     // kg/(s m^2)
  double source_enthalpy = 1.2e6;       // J/kg
  double thermal_conductivity = 2.5;    // W/(m K)
  double porosity = 0.10;               // steady state: recorded only
  /// Water-table slope across the surface; drives recharge proportional to K.
  double surface_head_slope = 0.05;     // m/m, rising to the right

  double fluid_density = 1000.0;        // kg/m^3
  double fluid_heat_capacity = 4186.0;  // J/(kg K)
  double kinematic_viscosity = 3e-7;    // m^2/s
  double gravity = 9.81;                // m/s^2

  double solver_tolerance = 1e-8;       // relative residual
  std::vector<Well> wells;

  int cells() const noexcept { return nx * nz; }
  int rock_count() const noexcept { return static_cast<int>(regions.size()); }
  double dx() const noexcept { return width / nx; }
  double dz() const noexcept { return depth / nz; }
  Eigen::Index observation_count() const;
  /// Throws ConfigError on an invalid geometry.
  void validate() const;
};

/// Six-region layout (cap rock, surface, medium, upflow, outflow, basement),
/// seven wells with fifteen depths each. The region geometry is a
/// reconstruction of a typical slice-model sketch, not surveyed data.
SliceConfig default_config(int nx, int nz);

/// Parameter names in vector order: kx_<rock>, kz_<rock> per rock type.
std::vector<std::string> parameter_names(const SliceConfig& cfg);

/// Rock index of every cell (row-major, x fastest, depth index 0 at the top),
/// assigned from the cell centre.
std::vector<int> rock_map(const SliceConfig& cfg);

struct PermeabilityField {
  Eigen::VectorXd kx;  // m^2 per cell
  Eigen::VectorXd kz;
};

/// Cell (i, j) receives 10^k for its rock type: k = [kx_0, kz_0, kx_1, kz_1, ...].
PermeabilityField map_parameters(const Eigen::VectorXd& k, std::span<const int> rocks, int rock_count);

struct EnergyBalance {
  double inflow = 0;   // W per metre of slice thickness
  double outflow = 0;
  double relative_imbalance() const;
};

struct SliceSolution {
  bool converged = false;
  std::string reason;
  Eigen::VectorXd pressure;     // excess over hydrostatic, Pa
  Eigen::VectorXd temperature;  // degC
  double mass_inflow = 0;       // kg/s per metre
  double mass_outflow = 0;
  EnergyBalance energy;
};

/// Solve the pressure then the temperature problem. Non-convergence is
/// reported through `converged`/`reason`, never thrown.
SliceSolution slice_simulate(const Eigen::VectorXd& k, const SliceConfig& cfg);
/// Same, with a precomputed rock map.
SliceSolution slice_simulate(const Eigen::VectorXd& k, const SliceConfig& cfg, std::span<const int> rocks);

/// Bilinear interpolation of cell-centre values at every well point; wells
/// left to right, depths shallow to deep. Linear fields are reproduced exactly,
/// including beyond the outermost cell centres.
Eigen::VectorXd well_observe(const Eigen::VectorXd& field, const SliceConfig& cfg);

/// ForwardModel wrapper: k -> well temperatures.
class SliceModel final : public ForwardModel {
 public:
  explicit SliceModel(SliceConfig cfg);

  Eigen::Index input_dim() const override { return 2 * cfg_.rock_count(); }
  Eigen::Index output_dim() const override { return cfg_.observation_count(); }
  EvalResult evaluate(const Eigen::VectorXd& k) const override;
  const SliceConfig& config() const noexcept { return cfg_; }

 private:
  SliceConfig cfg_;
  std::vector<int> rocks_;
};

}  // namespace bae::slice
