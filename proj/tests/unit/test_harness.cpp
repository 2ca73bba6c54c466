#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fedsim/errors.h"
#include "fedsim/harness.h"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_fed_spec() {
  ExperimentSpec s;
  s.name = "tiny-fed";
  s.model.n_blocks = 1;
  s.model.d_model = 8;
  s.model.n_heads = 2;
  s.model.vocab_size = 16;
  s.model.seq_len = 4;
  s.corpus_tokens = 2000;
  s.population = 2;
  s.participation = 1.0;
  s.rounds = 4;
  s.local_steps = 2;
  s.batch_size = 2;
  s.eval_every = 1;
  s.eval_sequences = 8;
  s.eval_batch = 4;
  return s;
}

ExperimentSpec tiny_central_spec() {
  ExperimentSpec s = tiny_fed_spec();
  s.name = "tiny-central";
  s.mode = RunMode::kCentralized;
  s.n_workers = 2;
  s.global_batch = 4;
  s.total_steps = 6;
  s.eval_every = 2;
  s.checkpoint_every = 2;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

bool bits_equal(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entry(i);
    const auto& eb = b.entry(i);
    if (ea.name != eb.name || ea.numel() != eb.numel()) return false;
    if (std::memcmp(ea.values->data(), eb.values->data(),
                    ea.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("spec serialization reaches a fixpoint") {
  ExperimentSpec s;  // defaults
  const std::string t1 = s.to_config().serialize();
  ExperimentSpec s2 = ExperimentSpec::from_config(KvConfig::parse_string(t1));
  CHECK(s2.to_config().serialize() == t1);

  ExperimentSpec m = tiny_fed_spec();
  m.server_opt.kind = ServerOptKind::FedMomentum;
  m.server_opt.eta = 0.1;
  m.server_opt.momentum = 0.9;
  m.server_opt.nesterov = true;
  m.data_policy = ShardPlan::Policy::kBySource;
  m.styles = {"academic", "web"};
  m.clients_per_source = 1;
  m.population = 2;
  m.topology = Topology::kParameterServer;
  const std::string t2 = m.to_config().serialize();
  ExperimentSpec m2 = ExperimentSpec::from_config(KvConfig::parse_string(t2));
  CHECK(m2.to_config().serialize() == t2);
  CHECK(m2.server_opt.kind == ServerOptKind::FedMomentum);
  CHECK(m2.server_opt.nesterov);
  CHECK(m2.styles == m.styles);

  ExperimentSpec c = tiny_central_spec();
  const std::string t3 = c.to_config().serialize();
  ExperimentSpec c2 = ExperimentSpec::from_config(KvConfig::parse_string(t3));
  CHECK(c2.to_config().serialize() == t3);
  CHECK(c2.mode == RunMode::kCentralized);
}

TEST_CASE("unknown keys are configuration errors") {
  KvConfig ok = ExperimentSpec{}.to_config();
  CHECK_NOTHROW(ExperimentSpec::from_config(ok));
  KvConfig extra = ExperimentSpec{}.to_config();
  extra.set("run", "bogus", "1");
  CHECK_THROWS_AS(ExperimentSpec::from_config(extra), ConfigError);
  KvConfig alien = ExperimentSpec{}.to_config();
  alien.set("nonsense", "x", "1");
  CHECK_THROWS_AS(ExperimentSpec::from_config(alien), ConfigError);
}

TEST_CASE("spec validation") {
  ExperimentSpec s = tiny_fed_spec();
  CHECK_NOTHROW(s.validate());

  s.participation = 0.3;  // only the documented fractions, K overrides aside
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.participation = 0.3;
  s.clients_per_round = 1;  // explicit K makes the fraction irrelevant
  CHECK_NOTHROW(s.validate());

  s = tiny_fed_spec();
  s.eval_sequences = 60;  // not divisible by eval_batch 8
  s.eval_batch = 8;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = tiny_fed_spec();
  s.data_policy = ShardPlan::Policy::kBySource;
  s.styles = {"academic", "web"};
  s.clients_per_source = 2;  // needs population 4, spec says 2
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.population = 4;
  CHECK_NOTHROW(s.validate());

  ExperimentSpec c = tiny_central_spec();
  c.global_batch = 5;  // not divisible by 2 workers
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("derived quantities") {
  ExperimentSpec s = tiny_fed_spec();
  s.population = 16;
  s.participation = 0.25;
  CHECK(s.effective_clients_per_round() == 4);
  s.participation = 0.5;
  CHECK(s.effective_clients_per_round() == 8);
  s.clients_per_round = 3;
  CHECK(s.effective_clients_per_round() == 3);

  s = tiny_fed_spec();
  s.population = 1;
  s.participation = 0.25;  // floors at one client
  CHECK(s.effective_clients_per_round() == 1);

  ExperimentSpec d;
  CHECK(d.effective_payload_mb() == d.model.payload_mib());
  d.cost.payload_mb = 50.0;
  CHECK(d.effective_payload_mb() == 50.0);
}

TEST_CASE("time to target walks the eval column") {
  const fs::path p = fs::temp_directory_path() / "fedsim_ttt.csv";
  {
    std::ofstream f(p);
    f << kRoundsCsvHeader << "\n";
    for (int r = 0; r < 10; ++r) {
      const double t_cum = 10.0 * (r + 1);
      // evals on odd rounds: 60, 50, 40, 30, 20
      std::string eval;
      if (r % 2 == 1) eval = std::to_string(60 - 10 * (r / 2));
      f << r << ",0;1,3.5," << eval << ",8,1.6,0.001," << t_cum << ",1000\n";
    }
  }
  CHECK(time_to_target(p, 60.0).value() == 20.0);
  CHECK(time_to_target(p, 35.0).value() == 80.0);
  CHECK(time_to_target(p, 20.0).value() == 100.0);
  CHECK(!time_to_target(p, 10.0).has_value());

  {
    std::ofstream f(p);
    f << "round,wrong,header\n0,1,2\n";
  }
  CHECK_THROWS_AS(time_to_target(p, 35.0), ParseError);
  fs::remove(p);
  CHECK_THROWS_AS(time_to_target(p, 35.0), IoError);

  CHECK(kRoundsCsvHeader ==
        std::string("round,sampled_ids,mean_client_loss,eval_ppl,t_local_s,"
                    "t_comm_s,t_agg_s,t_cum_s,bytes_round"));
}

TEST_CASE("federated run: artifacts and rerun determinism") {
  const fs::path d1 = fresh_dir("fedsim_h_run1");
  const fs::path d2 = fresh_dir("fedsim_h_run2");
  ExperimentSpec s = tiny_fed_spec();
  RunOutcome a = run_experiment(s, d1);
  CHECK(a.rounds_completed == 4);
  CHECK(a.initial_ppl > 0.0);
  CHECK(a.final_ppl > 0.0);
  CHECK(a.sync_events == 4);  // one per round, two clients talking
  CHECK(a.total_bytes > 0.0);
  CHECK(a.simulated_seconds > 0.0);
  CHECK(fs::exists(d1 / "rounds.csv"));
  CHECK(fs::exists(d1 / "config.resolved"));
  CHECK(fs::exists(d1 / "checkpoint.phck"));
  CHECK(fs::exists(d1 / "state.json"));
  CHECK(fs::exists(d1 / "summary.json"));

  RunOutcome b = run_experiment(s, d2);
  CHECK(bits_equal(a.theta, b.theta));
  CHECK(slurp(d1 / "rounds.csv") == slurp(d2 / "rounds.csv"));
  CHECK(slurp(d1 / "config.resolved") == slurp(d2 / "config.resolved"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("federated halt and resume is bit-identical") {
  const fs::path full_dir = fresh_dir("fedsim_h_full");
  const fs::path part_dir = fresh_dir("fedsim_h_part");
  ExperimentSpec s = tiny_fed_spec();
  // momentum server: resume must restore the velocity too
  s.server_opt = diloco_server_opt();

  RunOutcome full = run_experiment(s, full_dir);
  RunOutcome part = run_experiment(s, part_dir, false, 2);
  CHECK(part.rounds_completed == 2);
  CHECK(!fs::exists(part_dir / "summary.json"));
  CHECK(fs::exists(part_dir / "velocity.phck"));

  RunOutcome resumed = run_experiment(s, part_dir, true);
  CHECK(resumed.rounds_completed == 4);
  CHECK(bits_equal(full.theta, resumed.theta));
  CHECK(slurp(full_dir / "rounds.csv") == slurp(part_dir / "rounds.csv"));
  CHECK(slurp(full_dir / "checkpoint.phck") == slurp(part_dir / "checkpoint.phck"));
  CHECK(fs::exists(part_dir / "summary.json"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("centralized halt and resume is bit-identical") {
  const fs::path full_dir = fresh_dir("fedsim_h_cfull");
  const fs::path part_dir = fresh_dir("fedsim_h_cpart");
  ExperimentSpec s = tiny_central_spec();

  RunOutcome full = run_experiment(s, full_dir);
  CHECK(full.rounds_completed == 6);
  CHECK(full.sync_events == 6);  // two workers sync every step

  RunOutcome part = run_experiment(s, part_dir, false, 3);
  CHECK(part.rounds_completed == 3);
  RunOutcome resumed = run_experiment(s, part_dir, true);
  CHECK(resumed.rounds_completed == 6);
  CHECK(bits_equal(full.theta, resumed.theta));
  CHECK(slurp(full_dir / "rounds.csv") == slurp(part_dir / "rounds.csv"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("resume guards") {
  const fs::path d = fresh_dir("fedsim_h_guard");
  ExperimentSpec s = tiny_fed_spec();
  CHECK_THROWS_AS(run_experiment(s, d, true), ConfigError);  // nothing to resume

  (void)run_experiment(s, d, false, 2);
  ExperimentSpec other = s;
  other.seed = 999;  // different run, same directory
  CHECK_THROWS_AS(run_experiment(other, d, true), ConfigError);
  fs::remove_all(d);
}
