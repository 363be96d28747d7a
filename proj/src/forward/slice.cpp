#include "bae/slice.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "banded.hpp"

namespace bae::slice {

namespace {

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

double harmonic(double a, double b) { return (a + b) > 0 ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

Eigen::Index SliceConfig::observation_count() const {
  Eigen::Index m = 0;
  for (const auto& w : wells) m += static_cast<Eigen::Index>(w.depths.size());
  return m;
}

void SliceConfig::validate() const {
  if (nx < 4 || nz < 4) throw ConfigError("slice: nx and nz must be >= 4");
  if (!(width > 0) || !(depth > 0)) throw ConfigError("slice: domain size must be positive");
  if (regions.empty()) throw ConfigError("slice: no rock regions");
  for (const auto& w : wells) {
    if (w.x < 0 || w.x > width) throw ConfigError("slice: well outside the domain");
    for (double d : w.depths)
      if (d < 0 || d > depth) throw ConfigError("slice: observation depth outside the domain");
  }
  // Every cell centre must fall in some region; rock_map throws otherwise.
  (void)rock_map(*this);
}

double EnergyBalance::relative_imbalance() const {
  const double scale = std::max(std::abs(inflow), std::abs(outflow));
  return scale > 0 ? std::abs(inflow - outflow) / scale : 0.0;
}

SliceConfig default_config(int nx, int nz) {
  SliceConfig cfg;
  cfg.nx = nx;
  cfg.nz = nz;
  const double w = cfg.width;
  const double d = cfg.depth;
  cfg.regions = {
      {"cap", 500.0, w, 160.0, 480.0},
      {"surface", 0.0, w, 0.0, 160.0},
      {"medium", 500.0, w, 800.0, 1280.0},
      {"upflow", 0.0, 500.0, 160.0, 1280.0},
      {"outflow", 500.0, w, 480.0, 800.0},
      {"basement", 0.0, w, 1280.0, d},
  };
  for (int i = 1; i <= 7; ++i) {
    Well well;
    well.x = 250.0 * i;
    for (int j = 1; j <= 15; ++j) well.depths.push_back(100.0 * j);
    cfg.wells.push_back(std::move(well));
  }
  return cfg;
}

std::vector<std::string> parameter_names(const SliceConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& r : cfg.regions) {
    names.push_back("kx_" + r.name);
    names.push_back("kz_" + r.name);
  }
  return names;
}

std::vector<int> rock_map(const SliceConfig& cfg) {
  std::vector<int> rocks(static_cast<std::size_t>(cfg.cells()), -1);
  const double dx = cfg.dx();
  const double dz = cfg.dz();
  for (int j = 0; j < cfg.nz; ++j) {
    for (int i = 0; i < cfg.nx; ++i) {
      const double x = (i + 0.5) * dx;
      const double z = (j + 0.5) * dz;
      int found = -1;
      for (int r = 0; r < cfg.rock_count() && found < 0; ++r)
        if (cfg.regions[r].contains(x, z)) found = r;
      if (found < 0) {
        std::ostringstream msg;
        msg << "slice: cell (" << i << ", " << j << ") is not covered by any rock region";
        throw ConfigError(msg.str());
      }
      rocks[static_cast<std::size_t>(j * cfg.nx + i)] = found;
    }
  }
  return rocks;
}

PermeabilityField map_parameters(const Eigen::VectorXd& k, std::span<const int> rocks, int rock_count) {
  require(k.size() == 2 * rock_count, "map_parameters: need two log-permeabilities per rock type");
  PermeabilityField field;
  const auto n = static_cast<Eigen::Index>(rocks.size());
  field.kx.resize(n);
  field.kz.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const int r = rocks[static_cast<std::size_t>(c)];
    if (r < 0 || r >= rock_count) throw ContractViolation("map_parameters: unknown rock index");
    field.kx(c) = std::pow(10.0, k(2 * r));
    field.kz(c) = std::pow(10.0, k(2 * r + 1));
  }
  return field;
}

SliceSolution slice_simulate(const Eigen::VectorXd& k, const SliceConfig& cfg) {
  const auto rocks = rock_map(cfg);
  return slice_simulate(k, cfg, rocks);
}

SliceSolution slice_simulate(const Eigen::VectorXd& k, const SliceConfig& cfg, std::span<const int> rocks) {
  SliceSolution sol;
  if (!k.allFinite()) {
    sol.reason = "non-finite parameters";
    return sol;
  }
  const auto perm = map_parameters(k, rocks, cfg.rock_count());
  const int nx = cfg.nx;
  const int nz = cfg.nz;
  const Eigen::Index n = cfg.cells();
  const double dx = cfg.dx();
  const double dz = cfg.dz();
  const double nu = cfg.kinematic_viscosity;
  const double cp = cfg.fluid_heat_capacity;
  const double lambda = cfg.thermal_conductivity;
  auto idx = [nx](int i, int j) { return static_cast<Eigen::Index>(j * nx + i); };

  // Boundary data per column: top pressure, basal source mass and conductive heat.
  std::vector<double> p_top(nx), m_src(nx), q_cond(nx);
  for (int i = 0; i < nx; ++i) {
    const double x0 = i * dx;
    const double x1 = x0 + dx;
    const double xc = x0 + 0.5 * dx;
    p_top[i] = cfg.fluid_density * cfg.gravity * cfg.surface_head_slope * (xc - 0.5 * cfg.width);
    const double src_len = overlap(x0, x1, cfg.source_x_min, cfg.source_x_max);
    m_src[i] = cfg.source_mass_flux * src_len;
    q_cond[i] = cfg.basal_heat_flux * (dx - src_len);
  }

  // Transmissibilities (mass flux per unit pressure difference).
  Eigen::MatrixXd tx = Eigen::MatrixXd::Zero(nx, nz);  // face (i, j) | (i+1, j)
  Eigen::MatrixXd tz = Eigen::MatrixXd::Zero(nx, nz);  // face (i, j) | (i, j+1)
  Eigen::VectorXd ttop(nx);
  for (int j = 0; j < nz; ++j)
    for (int i = 0; i < nx; ++i) {
      if (i + 1 < nx) tx(i, j) = dz * harmonic(perm.kx(idx(i, j)), perm.kx(idx(i + 1, j))) / (nu * dx);
      if (j + 1 < nz) tz(i, j) = dx * harmonic(perm.kz(idx(i, j)), perm.kz(idx(i, j + 1))) / (nu * dz);
    }
  for (int i = 0; i < nx; ++i) ttop(i) = dx * perm.kz(idx(i, 0)) / (nu * 0.5 * dz);

  // Pressure: sum of outgoing Darcy fluxes equals the basal mass source.
  detail::BandMatrix ap(n, nx);
  Eigen::VectorXd bp = Eigen::VectorXd::Zero(n);
  auto couple = [](detail::BandMatrix& a, Eigen::Index p, Eigen::Index q, double t) {
    a(p, p) += t;
    a(q, q) += t;
    a(p, q) -= t;
    a(q, p) -= t;
  };
  for (int j = 0; j < nz; ++j)
    for (int i = 0; i < nx; ++i) {
      if (i + 1 < nx) couple(ap, idx(i, j), idx(i + 1, j), tx(i, j));
      if (j + 1 < nz) couple(ap, idx(i, j), idx(i, j + 1), tz(i, j));
    }
  for (int i = 0; i < nx; ++i) {
    ap(idx(i, 0), idx(i, 0)) += ttop(i);
    bp(idx(i, 0)) += ttop(i) * p_top[i];
    bp(idx(i, nz - 1)) += m_src[i];
  }
  const auto psolve = detail::solve_banded(ap, bp, cfg.solver_tolerance);
  if (!psolve.ok) {
    std::ostringstream msg;
    msg << "pressure solve did not converge (relative residual " << psolve.relative_residual << ")";
    sol.reason = msg.str();
    return sol;
  }
  sol.pressure = psolve.x;
  const auto& p = sol.pressure;

  // Face mass fluxes: positive in +x, +depth, and upward out of the top.
  Eigen::MatrixXd fx = Eigen::MatrixXd::Zero(nx, nz);
  Eigen::MatrixXd fz = Eigen::MatrixXd::Zero(nx, nz);
  Eigen::VectorXd ftop(nx);
  for (int j = 0; j < nz; ++j)
    for (int i = 0; i < nx; ++i) {
      if (i + 1 < nx) fx(i, j) = tx(i, j) * (p(idx(i, j)) - p(idx(i + 1, j)));
      if (j + 1 < nz) fz(i, j) = tz(i, j) * (p(idx(i, j)) - p(idx(i, j + 1)));
    }
  for (int i = 0; i < nx; ++i) ftop(i) = ttop(i) * (p(idx(i, 0)) - p_top[i]);

  // Energy: upwinded advection of c_p T plus conduction.
  detail::BandMatrix at(n, nx);
  Eigen::VectorXd bt = Eigen::VectorXd::Zero(n);
  auto advect = [cp](detail::BandMatrix& a, Eigen::Index from, Eigen::Index to, double flux) {
    if (flux >= 0) {
      a(from, from) += cp * flux;
      a(to, from) -= cp * flux;
    } else {
      a(to, to) -= cp * flux;
      a(from, to) += cp * flux;
    }
  };
  const double gx = lambda * dz / dx;
  const double gz = lambda * dx / dz;
  const double gtop = lambda * dx / (0.5 * dz);
  for (int j = 0; j < nz; ++j)
    for (int i = 0; i < nx; ++i) {
      if (i + 1 < nx) {
        couple(at, idx(i, j), idx(i + 1, j), gx);
        advect(at, idx(i, j), idx(i + 1, j), fx(i, j));
      }
      if (j + 1 < nz) {
        couple(at, idx(i, j), idx(i, j + 1), gz);
        advect(at, idx(i, j), idx(i, j + 1), fz(i, j));
      }
    }
  const double t_top = cfg.top_temperature;
  for (int i = 0; i < nx; ++i) {
    const Eigen::Index c = idx(i, 0);
    at(c, c) += gtop;
    bt(c) += gtop * t_top;
    if (ftop(i) >= 0)
      at(c, c) += cp * ftop(i);
    else
      bt(c) -= cp * ftop(i) * t_top;
    bt(idx(i, nz - 1)) += q_cond[i] + m_src[i] * cfg.source_enthalpy;
  }
  const auto tsolve = detail::solve_banded(at, bt, cfg.solver_tolerance);
  if (!tsolve.ok) {
    std::ostringstream msg;
    msg << "temperature solve did not converge (relative residual " << tsolve.relative_residual << ")";
    sol.reason = msg.str();
    return sol;
  }
  sol.temperature = tsolve.x;
  const auto& t = sol.temperature;

  // Boundary budgets.
  for (int i = 0; i < nx; ++i) {
    const Eigen::Index c = idx(i, 0);
    sol.mass_inflow += m_src[i];
    sol.energy.inflow += q_cond[i] + m_src[i] * cfg.source_enthalpy;
    const double conducted = gtop * (t(c) - t_top);
    if (conducted >= 0)
      sol.energy.outflow += conducted;
    else
      sol.energy.inflow -= conducted;
    if (ftop(i) >= 0) {
      sol.mass_outflow += ftop(i);
      sol.energy.outflow += cp * ftop(i) * t(c);
    } else {
      sol.mass_inflow -= ftop(i);
      sol.energy.inflow -= cp * ftop(i) * t_top;
    }
  }
  sol.converged = true;
  return sol;
}

Eigen::VectorXd well_observe(const Eigen::VectorXd& field, const SliceConfig& cfg) {
  require(field.size() == cfg.cells(), "well_observe: field size does not match the grid");
  const double dx = cfg.dx();
  const double dz = cfg.dz();
  // Index of the lower of the two bracketing centres and the (possibly
  // extrapolating) weight of the upper one.
  auto bracket = [](double s, int cells) {
    const double u = s - 0.5;
    const int lo = std::clamp(static_cast<int>(std::floor(u)), 0, cells - 2);
    return std::pair<int, double>{lo, u - lo};
  };
  Eigen::VectorXd y(cfg.observation_count());
  Eigen::Index out = 0;
  for (const auto& well : cfg.wells) {
    if (well.x < 0 || well.x > cfg.width) throw ContractViolation("well_observe: well outside the domain");
    const auto [i0, wx] = bracket(well.x / dx, cfg.nx);
    for (double depth : well.depths) {
      if (depth < 0 || depth > cfg.depth) throw ContractViolation("well_observe: depth outside the domain");
      const auto [j0, wz] = bracket(depth / dz, cfg.nz);
      auto at = [&](int i, int j) { return field(static_cast<Eigen::Index>(j * cfg.nx + i)); };
      const double top = (1 - wx) * at(i0, j0) + wx * at(i0 + 1, j0);
      const double bottom = (1 - wx) * at(i0, j0 + 1) + wx * at(i0 + 1, j0 + 1);
      y(out++) = (1 - wz) * top + wz * bottom;
    }
  }
  return y;
}

SliceModel::SliceModel(SliceConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  rocks_ = rock_map(cfg_);
}

EvalResult SliceModel::evaluate(const Eigen::VectorXd& k) const {
  require(k.size() == input_dim(), "SliceModel: parameter length mismatch");
  const auto sol = slice_simulate(k, cfg_, rocks_);
  if (!sol.converged) return EvalResult::failure("simulator-error: " + sol.reason);
  return EvalResult(well_observe(sol.temperature, cfg_));
}

}  // namespace bae::slice
