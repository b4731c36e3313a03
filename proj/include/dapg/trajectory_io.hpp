#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dapg/core.hpp"

namespace dapg {

// Demo/trajectory directory format: one CSV per trajectory plus a manifest.
//
//   manifest.txt    obs_dim=<n>, action_dim=<m>, source_tag=<text>,
//                   one trajectory=<file> line per trajectory
//   traj_NNNN.csv   header then rows t,obs_0..obs_{n-1},act_0..act_{m-1},
//                   reward,log_prob,done; one extra final row (t == length)
//                   carries the terminal observation with zero-filled
//                   action/reward/log_prob/done fields.
//
// Values are printed with 17 significant digits so a write/read round trip is
// bit-exact.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where, int line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ":" + std::to_string(line) +
                             ": cannot parse number '" + s + "'");
  }
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline void save_trajectory_csv(const std::filesystem::path& file, const Trajectory& traj) {
  traj.validate();
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file.string() + " for writing");
  const auto n = traj.transitions.front().observation.size();
  const auto m = traj.transitions.front().action.size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",obs_" << i;
  for (Eigen::Index i = 0; i < m; ++i) os << ",act_" << i;
  os << ",reward,log_prob,done\n";
  const auto row = [&](Eigen::Index t, const Eigen::VectorXd& obs,
                       const Eigen::VectorXd& act, double r, double lp, bool done) {
    os << t;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << detail::format_double(obs[i]);
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << detail::format_double(act[i]);
    os << ',' << detail::format_double(r) << ',' << detail::format_double(lp) << ','
       << (done ? 1 : 0) << '\n';
  };
  for (std::size_t t = 0; t < traj.transitions.size(); ++t) {
    const auto& tr = traj.transitions[t];
    row(static_cast<Eigen::Index>(t), tr.observation, tr.action, tr.reward, tr.log_prob,
        tr.done);
  }
  row(static_cast<Eigen::Index>(traj.transitions.size()), traj.terminal_observation,
      Eigen::VectorXd::Zero(m), 0.0, 0.0, false);
}

inline Trajectory load_trajectory_csv(const std::filesystem::path& file, int obs_dim,
                                      int action_dim) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  const std::string where = file.string();
  std::string line;
  int lineno = 0;
  if (!std::getline(is, line))
    throw std::runtime_error(where + ":1: missing header");
  ++lineno;
  const std::size_t expected_cols = 1 + static_cast<std::size_t>(obs_dim) +
                                    static_cast<std::size_t>(action_dim) + 3;

  std::vector<Transition> rows;
  Eigen::VectorXd terminal;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != expected_cols)
      throw std::runtime_error(where + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(expected_cols) + " columns, got " +
                               std::to_string(cells.size()));
    Transition tr;
    tr.observation.resize(obs_dim);
    tr.action.resize(action_dim);
    std::size_t c = 1;
    for (int i = 0; i < obs_dim; ++i)
      tr.observation[i] = detail::parse_double(cells[c++], where, lineno);
    for (int i = 0; i < action_dim; ++i)
      tr.action[i] = detail::parse_double(cells[c++], where, lineno);
    tr.reward = detail::parse_double(cells[c++], where, lineno);
    tr.log_prob = detail::parse_double(cells[c++], where, lineno);
    tr.done = detail::parse_double(cells[c++], where, lineno) != 0.0;
    rows.push_back(std::move(tr));
  }
  if (rows.size() < 2)
    throw std::runtime_error(where + ": trajectory needs at least one transition plus "
                             "the terminal row");
  Trajectory traj;
  traj.terminal_observation = rows.back().observation;
  rows.pop_back();
  traj.transitions = std::move(rows);
  traj.validate();
  return traj;
}

// dims may be passed explicitly to allow writing an empty set
inline void save_demo_set(const std::filesystem::path& dir, const DemoSet& demos,
                          Eigen::Index obs_dim = -1, Eigen::Index act_dim = -1) {
  if (!demos.trajectories.empty()) {
    demos.validate();
    obs_dim = demos.trajectories.front().transitions.front().observation.size();
    act_dim = demos.trajectories.front().transitions.front().action.size();
  }
  require(obs_dim >= 1 && act_dim >= 1,
          "save_demo_set: empty set needs explicit obs/action dims");
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "obs_dim=" << obs_dim << "\n";
  manifest << "action_dim=" << act_dim << "\n";
  manifest << "source_tag=" << demos.source_tag << "\n";
  for (std::size_t i = 0; i < demos.trajectories.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "traj_%04zu.csv", i);
    save_trajectory_csv(dir / name, demos.trajectories[i]);
    manifest << "trajectory=" << name << "\n";
  }
}

inline DemoSet load_demo_set(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest)
    throw std::runtime_error("cannot open manifest " + manifest_path.string());
  int obs_dim = -1, act_dim = -1;
  DemoSet demos;
  std::vector<std::string> files;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) +
                               ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "obs_dim") {
      obs_dim = static_cast<int>(detail::parse_double(value, manifest_path.string(), lineno));
    } else if (key == "action_dim") {
      act_dim = static_cast<int>(detail::parse_double(value, manifest_path.string(), lineno));
    } else if (key == "source_tag") {
      demos.source_tag = value;
    } else if (key == "trajectory") {
      files.push_back(value);
    } else {
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) +
                               ": unknown key '" + key + "'");
    }
  }
  if (obs_dim < 1 || act_dim < 1)
    throw std::runtime_error(manifest_path.string() + ": missing obs_dim/action_dim");
  for (const auto& f : files)
    demos.trajectories.push_back(load_trajectory_csv(dir / f, obs_dim, act_dim));
  return demos;
}

}  // namespace dapg
