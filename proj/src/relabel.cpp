#include "qdt/relabel.hpp"

#include <algorithm>
#include <cmath>

#include "qdt/errors.hpp"

namespace qdt {

nlohmann::json TrajectoryRelabelReport::to_json() const {
  return {{"index", index},
          {"n_positions", n_positions},
          {"n_replaced", n_replaced},
          {"mean_uplift", mean_uplift},
          {"max_uplift", max_uplift},
          {"replaced_positions", replaced_positions}};
}

nlohmann::json RelabelReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& t : per_trajectory) per.push_back(t.to_json());
  return {{"n_positions_total", n_positions_total},
          {"n_positions_replaced", n_positions_replaced},
          {"mean_uplift", mean_uplift},
          {"max_uplift", max_uplift},
          {"per_trajectory", per}};
}

std::pair<Trajectory, TrajectoryRelabelReport> relabel_trajectory(
    const Trajectory& traj, const ValueFn& value_fn) {
  traj.validate();
  const int t_end = traj.length();

  // Baseline rtg for the uplift bookkeeping.
  Trajectory baseline = traj;
  if (baseline.rtg.empty()) compute_rtg(baseline);

  Trajectory out = traj;
  out.rtg.assign(t_end + 1, 0.0);
  TrajectoryRelabelReport report;
  report.n_positions = t_end;

  for (int tau = t_end; tau >= 1; --tau) {
    const double v = value_fn(out.states[tau]);
    if (!std::isfinite(v)) {
      throw DivergenceError("value function returned a non-finite value at state " +
                            std::to_string(out.states[tau]));
    }
    if (v > out.rtg[tau]) {
      out.rtg[tau - 1] = out.rewards[tau - 1] + v;
      ++report.n_replaced;
      report.replaced_positions.push_back(tau);
    } else {
      out.rtg[tau - 1] = out.rewards[tau - 1] + out.rtg[tau];
    }
  }

  std::reverse(report.replaced_positions.begin(),
               report.replaced_positions.end());
  double total_uplift = 0.0;
  for (int i = 0; i < t_end; ++i) {
    const double uplift = out.rtg[i] - baseline.rtg[i];
    total_uplift += uplift;
    report.max_uplift = std::max(report.max_uplift, uplift);
  }
  report.mean_uplift = t_end > 0 ? total_uplift / t_end : 0.0;
  return {std::move(out), report};
}

std::pair<OfflineDataset, RelabelReport> relabel_dataset(
    const OfflineDataset& ds, const ValueFn& value_fn,
    const std::string& value_fn_id) {
  OfflineDataset out;
  out.env_spec = ds.env_spec;
  out.env_json = ds.env_json;
  out.provenance = ds.provenance;
  out.provenance.value_fn = value_fn_id;

  RelabelReport report;
  double total_uplift = 0.0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    try {
      auto [traj, tr] = relabel_trajectory(ds.trajectories[i], value_fn);
      tr.index = static_cast<int>(i);
      report.n_positions_total += tr.n_positions;
      report.n_positions_replaced += tr.n_replaced;
      report.max_uplift = std::max(report.max_uplift, tr.max_uplift);
      total_uplift += tr.mean_uplift * tr.n_positions;
      report.per_trajectory.push_back(tr);
      out.trajectories.push_back(std::move(traj));
    } catch (const Error& e) {
      throw DivergenceError("relabelling trajectory " + std::to_string(i) +
                            " failed: " + e.what());
    }
  }
  report.mean_uplift = report.n_positions_total > 0
                           ? total_uplift / report.n_positions_total
                           : 0.0;
  return {std::move(out), std::move(report)};
}

std::vector<double> window_rtg(const Trajectory& traj, int t, int k) {
  if (k < 1) throw Error("window_rtg: k must be >= 1");
  if (t < 0 || t >= static_cast<int>(traj.rtg.size())) {
    throw Error("window_rtg: t out of range");
  }
  const int lo = std::max(0, t - k + 1);
  std::vector<double> out(t - lo + 1, 0.0);
  out[t - lo] = traj.rtg[t];
  for (int tau = t - 1; tau >= lo; --tau) {
    out[tau - lo] = traj.rewards[tau] + out[tau - lo + 1];
  }
  return out;
}

}  // namespace qdt
