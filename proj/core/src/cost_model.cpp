#include "fedsim/cost_model.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fedsim/errors.h"

namespace fedsim {

const char* topology_name(Topology t) {
  switch (t) {
    case Topology::kParameterServer: return "ps";
    case Topology::kAllReduce: return "ar";
    case Topology::kRingAllReduce: return "rar";
  }
  return "?";
}

Topology topology_from_name(const std::string& name) {
  if (name == "ps") return Topology::kParameterServer;
  if (name == "ar") return Topology::kAllReduce;
  if (name == "rar") return Topology::kRingAllReduce;
  throw ConfigError("unknown topology: " + name + " (expected ps|ar|rar)");
}

BandwidthMatrix::BandwidthMatrix(std::vector<std::string> regions,
                                 std::vector<double> mbps)
    : regions_(std::move(regions)), mbps_(std::move(mbps)) {
  const std::size_t n = regions_.size();
  if (mbps_.size() != n * n) {
    throw ConfigError("bandwidth matrix must be square");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (mbps_[i * n + j] != mbps_[j * n + i]) {
        throw ConfigError("bandwidth matrix must be symmetric (" + regions_[i] +
                          " vs " + regions_[j] + ")");
      }
    }
  }
}

double BandwidthMatrix::link(std::size_t i, std::size_t j) const {
  const std::size_t n = regions_.size();
  if (i >= n || j >= n) throw IndexError("bandwidth matrix index out of range");
  return mbps_[i * n + j];
}

BandwidthMatrix load_bandwidth_matrix(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream probe(line);
    std::string tok;
    if (probe >> tok) lines.push_back(line);
  }
  if (lines.empty()) throw ParseError("bandwidth matrix file is empty");

  std::istringstream head(lines[0]);
  std::vector<std::string> regions;
  std::string name;
  while (head >> name) regions.push_back(name);
  const std::size_t n = regions.size();
  if (lines.size() != n + 1) {
    throw ParseError("bandwidth matrix: expected " + std::to_string(n) +
                     " rows, got " + std::to_string(lines.size() - 1));
  }
  std::vector<double> mbps(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream row(lines[i + 1]);
    std::string row_name;
    row >> row_name;
    if (row_name != regions[i]) {
      throw ParseError("bandwidth matrix: row " + std::to_string(i) +
                       " is " + row_name + ", expected " + regions[i]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (!(row >> mbps[i * n + j])) {
        throw ParseError("bandwidth matrix: short row for " + row_name);
      }
    }
    double extra;
    if (row >> extra) throw ParseError("bandwidth matrix: long row for " + row_name);
  }
  return BandwidthMatrix(std::move(regions), std::move(mbps));
}

void CostModelParams::validate() const {
  if (!(payload_mb > 0.0)) throw ConfigError("cost model: S must be > 0");
  if (!(bandwidth_mbps > 0.0)) throw ConfigError("cost model: B must be > 0");
  if (!(throughput_bps > 0.0)) throw ConfigError("cost model: nu must be > 0");
  if (!(server_flops > 0.0)) throw ConfigError("cost model: zeta must be > 0");
}

double local_time(std::size_t tau, double nu) {
  if (!(nu > 0.0)) throw ConfigError("local_time: nu must be > 0");
  return static_cast<double>(tau) / nu;
}

double comm_time(Topology t, std::size_t k, double s_mb, double b_mbps) {
  if (k < 1) throw ConfigError("comm_time: K must be >= 1");
  if (!(s_mb > 0.0) || !(b_mbps > 0.0)) {
    throw ConfigError("comm_time: S and B must be > 0");
  }
  if (k == 1) return 0.0;  // no communication occurs
  const double kd = static_cast<double>(k);
  switch (t) {
    case Topology::kParameterServer:
      return kd * s_mb / b_mbps;
    case Topology::kAllReduce:
      return (kd - 1.0) * s_mb / b_mbps;
    case Topology::kRingAllReduce:
      return 2.0 * s_mb * (kd - 1.0) / (kd * b_mbps);
  }
  throw ConfigError("comm_time: bad topology");
}

double comm_time_rar(std::size_t k, double s_mb, const BandwidthMatrix& links,
                     const std::vector<std::size_t>& ring_order) {
  if (k < 1) throw ConfigError("comm_time: K must be >= 1");
  if (k == 1) return 0.0;
  std::vector<std::size_t> order = ring_order;
  if (order.empty()) {
    order.resize(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
  }
  if (order.size() != k) {
    throw ConfigError("ring order must list all K participants");
  }
  double slowest = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t a = order[i];
    const std::size_t b = order[(i + 1) % k];  // wrap edge included
    const double bw = links.link(a, b);
    if (!(bw > 0.0)) {
      throw ConfigError("ring edge " + links.regions()[a] + "-" +
                        links.regions()[b] + " has no bandwidth");
    }
    if (first || bw < slowest) slowest = bw;
    first = false;
  }
  return comm_time(Topology::kRingAllReduce, k, s_mb, slowest);
}

double aggregation_flops(double s_mb) {
  // Pinned unit convention: 1 MB = 2^20 bytes, 4 FLOP per payload byte.
  return s_mb * 1048576.0 * 4.0;
}

double agg_time(std::size_t k, double s_mb, double zeta) {
  if (!(zeta > 0.0)) throw ConfigError("agg_time: zeta must be > 0");
  return static_cast<double>(k) * aggregation_flops(s_mb) / zeta;
}

double bytes_per_round(Topology t, std::size_t k, double s_mb) {
  if (k < 1) throw ConfigError("bytes_per_round: K must be >= 1");
  if (k == 1) return 0.0;
  const double kd = static_cast<double>(k);
  const double s_bytes = s_mb * 1048576.0;
  switch (t) {
    case Topology::kParameterServer:
      return 2.0 * kd * s_bytes;
    case Topology::kAllReduce:
      return kd * 2.0 * (kd - 1.0) * s_bytes;
    case Topology::kRingAllReduce:
      return 2.0 * s_bytes * (kd - 1.0);
  }
  throw ConfigError("bytes_per_round: bad topology");
}

double WallTimeBreakdown::comm_percent() const {
  if (t_round <= 0.0) return 0.0;
  return 100.0 * t_comm / t_round;
}

WallTimeBreakdown total_wall_time(std::size_t rounds, Topology t, std::size_t k,
                                  const CostModelParams& p, std::size_t tau) {
  if (rounds < 1) throw ConfigError("total_wall_time: R must be >= 1");
  p.validate();
  WallTimeBreakdown b;
  b.t_local = local_time(tau, p.throughput_bps);
  b.t_comm = comm_time(t, k, p.payload_mb, p.bandwidth_mbps);
  b.t_agg = agg_time(k, p.payload_mb, p.server_flops);
  b.t_round = b.t_local + b.t_comm;
  b.t_total = static_cast<double>(rounds) * b.t_round;
  b.bytes_round = bytes_per_round(t, k, p.payload_mb);
  b.total_bytes = static_cast<double>(rounds) * b.bytes_round;
  return b;
}

double comm_reduction_ratio(std::size_t total_steps, std::size_t tau) {
  if (tau < 1) throw ConfigError("comm_reduction_ratio: tau must be >= 1");
  if (total_steps == 0) return 1.0;
  const std::uint64_t fed_events =
      (static_cast<std::uint64_t>(total_steps) + tau - 1) / tau;
  return static_cast<double>(total_steps) / static_cast<double>(fed_events);
}

}  // namespace fedsim
