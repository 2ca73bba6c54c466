#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedsim {

enum class Topology { kParameterServer, kAllReduce, kRingAllReduce };

const char* topology_name(Topology t);
Topology topology_from_name(const std::string& name);  // ConfigError if unknown

// Symmetric per-link bandwidth table keyed by region names (MBps).
class BandwidthMatrix {
 public:
  BandwidthMatrix() = default;
  BandwidthMatrix(std::vector<std::string> regions, std::vector<double> mbps);

  std::size_t size() const { return regions_.size(); }
  const std::vector<std::string>& regions() const { return regions_; }
  double link(std::size_t i, std::size_t j) const;

 private:
  std::vector<std::string> regions_;
  std::vector<double> mbps_;  // row-major size*size
};

// Plain-text table: first line region names, then one row per region as
// "<name> v1 v2 ... vn".  '#' starts a comment.
BandwidthMatrix load_bandwidth_matrix(const std::filesystem::path& path);

// All sizes in MB where 1 MB = 2^20 bytes; bandwidth in MB/s; throughput in
// batches/s; capacity in FLOP/s.
struct CostModelParams {
  double payload_mb = 0.0;        // S
  double bandwidth_mbps = 125.0;  // B (scalar path)
  double throughput_bps = 2.0;    // nu
  double server_flops = 5e12;     // zeta
  double channel_threshold = 100; // inert; kept for config compatibility

  void validate() const;
};

// T_L = tau / nu.  Independent of K.
double local_time(std::size_t tau, double nu);

// T_C: PS = K*S/B, AR = (K-1)*S/B, RAR = 2*S*(K-1)/(K*B); K=1 is 0 for all.
double comm_time(Topology t, std::size_t k, double s_mb, double b_mbps);

// RAR over a bandwidth matrix: B is the slowest link along the ring
// (consecutive pairs in ring_order, including the wrap edge).  ring_order
// maps ring position -> region index; empty means ascending 0..K-1.
double comm_time_rar(std::size_t k, double s_mb, const BandwidthMatrix& links,
                     const std::vector<std::size_t>& ring_order = {});

// The one place the FLOP-equivalent conversion lives: bytes(S) * 4 FLOP/byte,
// with bytes(S) = S * 2^20.  agg_time = K * flops(S) / zeta; reported in
// breakdowns but excluded from T_round.
double aggregation_flops(double s_mb);
double agg_time(std::size_t k, double s_mb, double zeta);

// Network-wide byte counters per round, from the per-worker accounting
// PS = 2*K*S total (broadcast down + updates up), AR = 2*(K-1)*S per worker,
// RAR = 2*S*(K-1)/K per worker.  Returned in bytes (S MB * 2^20).
double bytes_per_round(Topology t, std::size_t k, double s_mb);

struct WallTimeBreakdown {
  double t_local = 0.0;
  double t_comm = 0.0;
  double t_agg = 0.0;
  double t_round = 0.0;       // t_local + t_comm
  double t_total = 0.0;       // rounds * t_round
  double bytes_round = 0.0;
  double total_bytes = 0.0;

  double comm_percent() const;  // share of t_comm in t_round, in percent
};

WallTimeBreakdown total_wall_time(std::size_t rounds, Topology t, std::size_t k,
                                  const CostModelParams& p, std::size_t tau);

// DDP sync events (one per step) over federated sync events (one per round):
// T / ceil(T/tau); equals tau exactly when tau divides T.
double comm_reduction_ratio(std::size_t total_steps, std::size_t tau);

}  // namespace fedsim
