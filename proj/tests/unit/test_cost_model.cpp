#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "fedsim/cost_model.h"
#include "fedsim/errors.h"

using namespace fedsim;

namespace {
bool close(double a, double b, double rel = 1e-12) {
  return std::abs(a - b) <= rel * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}
}  // namespace

TEST_CASE("communication time per topology") {
  // K clients, S MB payload, B MB/s per link. Hand-derived:
  //   star: K*S/B   dense: (K-1)*S/B   ring: 2*S*(K-1)/(K*B)
  CHECK(close(comm_time(Topology::kParameterServer, 4, 100.0, 125.0), 3.2));
  CHECK(close(comm_time(Topology::kAllReduce, 4, 100.0, 125.0), 2.4));
  CHECK(close(comm_time(Topology::kRingAllReduce, 4, 100.0, 125.0), 1.2));

  CHECK(close(comm_time(Topology::kParameterServer, 16, 1000.0, 125.0), 128.0));
  CHECK(close(comm_time(Topology::kAllReduce, 16, 1000.0, 125.0), 120.0));
  CHECK(close(comm_time(Topology::kRingAllReduce, 16, 1000.0, 125.0), 15.0));

  // A lone participant has nobody to talk to.
  for (auto t : {Topology::kParameterServer, Topology::kAllReduce,
                 Topology::kRingAllReduce}) {
    CHECK(comm_time(t, 1, 1000.0, 125.0) == 0.0);
    CHECK(bytes_per_round(t, 1, 1000.0) == 0.0);
  }
}

TEST_CASE("bytes on the wire per round") {
  // star: 2*K*S, dense: K*2*(K-1)*S, ring: 2*S*(K-1); S in MB -> bytes.
  CHECK(close(bytes_per_round(Topology::kParameterServer, 4, 100.0), 838860800.0));
  CHECK(close(bytes_per_round(Topology::kAllReduce, 4, 100.0), 2516582400.0));
  CHECK(close(bytes_per_round(Topology::kRingAllReduce, 4, 100.0), 629145600.0));
}

TEST_CASE("aggregation cost") {
  // 4 flops per payload byte, then k repetitions over server_flops.
  CHECK(aggregation_flops(100.0) == 100.0 * 1048576.0 * 4.0);
  CHECK(close(agg_time(4, 1000.0, 5e12), 0.0033554432));
}

TEST_CASE("local compute time") {
  CHECK(close(local_time(64, 2.0), 32.0));
  const double nus[] = {0.147, 0.839, 0.144, 0.395, 0.032, 0.12};
  const double want[] = {435.374149659864,    76.28128724672229,
                        444.44444444444446,  162.02531645569618,
                        2000.0,              533.3333333333334};
  for (int i = 0; i < 6; ++i) CHECK(close(local_time(64, nus[i]), want[i]));
  CHECK_THROWS_AS(local_time(64, 0.0), ConfigError);
}

TEST_CASE("wall time composition and comm share") {
  CostModelParams p;
  p.payload_mb = 100.0;
  p.bandwidth_mbps = 125.0;
  p.throughput_bps = 2.0;
  p.server_flops = 5e12;
  auto w = total_wall_time(10, Topology::kParameterServer, 4, p, 64);
  CHECK(close(w.t_local, 32.0));
  CHECK(close(w.t_comm, 3.2));
  // Round time excludes the server-side reduce; it is tracked separately.
  CHECK(close(w.t_round, 35.2));
  CHECK(close(w.t_total, 352.0));
  CHECK(close(w.bytes_round, 838860800.0));
  CHECK(close(w.total_bytes, 8388608000.0));
  CHECK(close(w.comm_percent(), 100.0 * 3.2 / 35.2));
}

TEST_CASE("communication reduction vs per-step sync") {
  CHECK(close(comm_reduction_ratio(8192, 64), 64.0));
  CHECK(close(comm_reduction_ratio(8192, 512), 512.0));
  CHECK(close(comm_reduction_ratio(100, 64), 50.0));
}

TEST_CASE("heterogeneous ring picks the weakest link") {
  // 3 regions; the slowest link along the ring (wrap edge included) bounds it.
  BandwidthMatrix m({"a", "b", "c"},
                    {0.0, 50.0, 100.0,   //
                     50.0, 0.0, 200.0,   //
                     100.0, 200.0, 0.0});
  // ring order a-b-c-a: links 50, 200, 100 -> min 50
  const double got = comm_time_rar(3, 100.0, m, {0, 1, 2});
  CHECK(close(got, 2.0 * 100.0 * (3 - 1) / (3 * 50.0)));
  // reordering the ring can change the bottleneck: a-c-b-a uses 100, 200, 50
  CHECK(close(comm_time_rar(3, 100.0, m, {0, 2, 1}), got));
  // single node: no traffic
  CHECK(comm_time_rar(1, 100.0, m, {0}) == 0.0);
  // a ring must visit everyone exactly once
  CHECK_THROWS_AS(comm_time_rar(3, 100.0, m, {0, 1, 1}), ConfigError);
}

TEST_CASE("asymmetric bandwidth tables are rejected") {
  CHECK_THROWS_AS(BandwidthMatrix({"a", "b"}, {0.0, 50.0, 60.0, 0.0}),
                  ConfigError);
  CHECK_THROWS_AS(BandwidthMatrix({"a", "b"}, {0.0, 50.0, 50.0}), ConfigError);
}

TEST_CASE("bandwidth matrix loading") {
  namespace fs = std::filesystem;
  const auto p = fs::temp_directory_path() / "fedsim_bw_test.txt";
  {
    std::ofstream f(p);
    f << "# comment\n"
      << "us eu ap\n"
      << "us 0 50 100\n"
      << "eu 50 0 200\n"
      << "ap 100 200 0\n";
  }
  BandwidthMatrix m = load_bandwidth_matrix(p);
  CHECK(m.size() == 3);
  CHECK(m.regions()[1] == "eu");
  CHECK(m.link(0, 1) == 50.0);
  CHECK(m.link(1, 0) == 50.0);
  CHECK(m.link(1, 2) == 200.0);
  CHECK_THROWS_AS(m.link(0, 3), IndexError);
  fs::remove(p);

  {
    std::ofstream f(p);
    f << "us eu\nus 0 50\neu 60\n";  // short row
  }
  CHECK_THROWS_AS(load_bandwidth_matrix(p), ParseError);
  fs::remove(p);
  CHECK_THROWS_AS(load_bandwidth_matrix("/does/not/exist.txt"), IoError);
}

TEST_CASE("parameter validation") {
  CostModelParams p;
  p.payload_mb = 100.0;
  CHECK_NOTHROW(p.validate());
  CostModelParams bad = p;
  bad.payload_mb = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.bandwidth_mbps = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.throughput_bps = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.server_flops = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("topology names") {
  CHECK(topology_from_name(topology_name(Topology::kParameterServer)) ==
        Topology::kParameterServer);
  CHECK(topology_from_name(topology_name(Topology::kAllReduce)) ==
        Topology::kAllReduce);
  CHECK(topology_from_name(topology_name(Topology::kRingAllReduce)) ==
        Topology::kRingAllReduce);
  CHECK_THROWS_AS(topology_from_name("mesh"), ConfigError);
}
