#include "fedsim/harness.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "fedsim/checkpoint.h"
#include "fedsim/errors.h"
#include "fedsim/rng.h"

namespace fedsim {

const char* const kRoundsCsvHeader =
    "round,sampled_ids,mean_client_loss,eval_ppl,t_local_s,t_comm_s,t_agg_s,"
    "t_cum_s,bytes_round";

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  if (s.empty()) throw ConfigError(what + ": empty integer");
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw ConfigError(what + ": bad integer '" + s + "'");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

std::string fmt(double v) { return KvConfig::format_double(v); }

// --- spec <-> config -------------------------------------------------------

struct SchemaKey {
  const char* section;
  const char* key;
};

constexpr SchemaKey kSchema[] = {
    {"run", "name"},          {"run", "mode"},
    {"run", "seed"},          {"run", "model_seed"},
    {"run", "data_seed"},     {"run", "threads"},
    {"run", "eval_every"},    {"run", "eval_sequences"},
    {"run", "eval_batch"},    {"run", "client_checkpoints"},
    {"run", "checkpoint_every"},
    {"model", "n_blocks"},    {"model", "d_model"},
    {"model", "n_heads"},     {"model", "expansion_ratio"},
    {"model", "vocab_size"},  {"model", "seq_len"},
    {"data", "policy"},       {"data", "style"},
    {"data", "styles"},       {"data", "corpus_tokens"},
    {"data", "clients_per_source"},
    {"federation", "population"},        {"federation", "participation"},
    {"federation", "clients_per_round"}, {"federation", "rounds"},
    {"federation", "local_steps"},       {"federation", "batch_size"},
    {"federation", "topology"},
    {"client_opt", "optimizer"},    {"client_opt", "eta_max"},
    {"client_opt", "warmup_steps"}, {"client_opt", "decay_steps"},
    {"client_opt", "alpha"},        {"client_opt", "beta1"},
    {"client_opt", "beta2"},        {"client_opt", "eps"},
    {"client_opt", "weight_decay"}, {"client_opt", "clip_norm"},
    {"client_opt", "sgd_clip_norm"},
    {"server_opt", "kind"},     {"server_opt", "eta"},
    {"server_opt", "momentum"}, {"server_opt", "nesterov"},
    {"cost", "payload_mb"},        {"cost", "bandwidth_mbps"},
    {"cost", "throughput_bps"},    {"cost", "server_flops"},
    {"cost", "channel_threshold"}, {"cost", "bandwidth_matrix"},
    {"cost", "ring_order"},
    {"post", "policy"}, {"post", "threshold"},
    {"centralized", "n_workers"},   {"centralized", "global_batch"},
    {"centralized", "total_steps"}, {"centralized", "opt_reset_interval"},
};

void check_known_keys(const KvConfig& cfg) {
  for (const auto& sec : cfg.sections()) {
    for (const auto& key : cfg.keys(sec)) {
      bool known = false;
      for (const auto& sk : kSchema) {
        if (sec == sk.section && key == sk.key) {
          known = true;
          break;
        }
      }
      if (!known) {
        throw ConfigError("unknown config key: " + sec + "." + key);
      }
    }
  }
}

}  // namespace

std::size_t ExperimentSpec::effective_clients_per_round() const {
  if (clients_per_round > 0) return clients_per_round;
  const double k = participation * static_cast<double>(population);
  const auto rounded = static_cast<std::size_t>(std::llround(k));
  return rounded < 1 ? 1 : rounded;
}

double ExperimentSpec::effective_payload_mb() const {
  return cost.payload_mb > 0.0 ? cost.payload_mb : model.payload_mib();
}

void ExperimentSpec::validate() const {
  model.validate();
  schedule.validate();
  adamw.validate();
  server_opt.validate();
  CostModelParams effective_cost = cost;
  effective_cost.payload_mb = effective_payload_mb();
  effective_cost.validate();
  if (eval_every > 0) {
    if (eval_sequences == 0 || eval_batch == 0 ||
        eval_sequences % eval_batch != 0) {
      throw ConfigError(
          "eval_sequences must be a positive multiple of eval_batch");
    }
    const std::size_t n_styles =
        data_policy == ShardPlan::Policy::kIid ? 1 : styles.size();
    if (n_styles == 0 || eval_sequences % n_styles != 0) {
      throw ConfigError("eval_sequences must divide evenly across styles");
    }
  }
  if (data_policy == ShardPlan::Policy::kBySource && styles.empty()) {
    throw ConfigError("by_source data needs a styles list");
  }
  if (mode == RunMode::kFederated) {
    if (clients_per_round == 0 && participation != 0.25 &&
        participation != 0.5 && participation != 1.0) {
      throw ConfigError("participation must be 0.25, 0.5 or 1.0");
    }
    const std::size_t k = effective_clients_per_round();
    if (k < 1 || k > population) {
      throw ConfigError("derived clients_per_round outside [1, population]");
    }
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (data_policy == ShardPlan::Policy::kBySource &&
        population != styles.size() * clients_per_source) {
      throw ConfigError("population must equal styles * clients_per_source");
    }
  } else {
    if (n_workers < 1) throw ConfigError("n_workers must be >= 1");
    if (global_batch < 1 || global_batch % n_workers != 0) {
      throw ConfigError("global_batch must divide by n_workers");
    }
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  }
}

ExperimentSpec ExperimentSpec::from_config(const KvConfig& cfg) {
  check_known_keys(cfg);
  ExperimentSpec s;
  s.name = cfg.get_or("run", "name", s.name);
  const std::string mode = cfg.get_or("run", "mode", "federated");
  if (mode == "federated") {
    s.mode = RunMode::kFederated;
  } else if (mode == "centralized") {
    s.mode = RunMode::kCentralized;
  } else {
    throw ConfigError("run.mode must be federated|centralized, got " + mode);
  }
  s.seed = cfg.get_u64("run", "seed", s.seed);
  s.model_seed = cfg.get_u64("run", "model_seed", s.model_seed);
  s.data_seed = cfg.get_u64("run", "data_seed", s.data_seed);
  s.threads = cfg.get_size("run", "threads", s.threads);
  s.eval_every = cfg.get_size("run", "eval_every", s.eval_every);
  s.eval_sequences = cfg.get_size("run", "eval_sequences", s.eval_sequences);
  s.eval_batch = cfg.get_size("run", "eval_batch", s.eval_batch);
  s.client_checkpoints =
      cfg.get_bool("run", "client_checkpoints", s.client_checkpoints);
  s.checkpoint_every =
      cfg.get_size("run", "checkpoint_every", s.checkpoint_every);

  s.model.n_blocks = cfg.get_size("model", "n_blocks", s.model.n_blocks);
  s.model.d_model = cfg.get_size("model", "d_model", s.model.d_model);
  s.model.n_heads = cfg.get_size("model", "n_heads", s.model.n_heads);
  s.model.expansion_ratio =
      cfg.get_size("model", "expansion_ratio", s.model.expansion_ratio);
  s.model.vocab_size = cfg.get_size("model", "vocab_size", s.model.vocab_size);
  s.model.seq_len = cfg.get_size("model", "seq_len", s.model.seq_len);

  const std::string policy = cfg.get_or("data", "policy", "iid");
  if (policy == "iid") {
    s.data_policy = ShardPlan::Policy::kIid;
  } else if (policy == "by_source") {
    s.data_policy = ShardPlan::Policy::kBySource;
  } else {
    throw ConfigError("data.policy must be iid|by_source, got " + policy);
  }
  s.style = cfg.get_or("data", "style", s.style);
  const std::string styles = cfg.get_or("data", "styles", "");
  s.styles.clear();
  if (!styles.empty()) {
    for (auto& part : split(styles, ',')) {
      if (!part.empty()) s.styles.push_back(part);
    }
  } else if (s.data_policy == ShardPlan::Policy::kBySource) {
    s.styles = known_styles();
  }
  s.corpus_tokens = cfg.get_size("data", "corpus_tokens", s.corpus_tokens);
  s.clients_per_source =
      cfg.get_size("data", "clients_per_source", s.clients_per_source);

  s.population = cfg.get_size("federation", "population", s.population);
  s.participation =
      cfg.get_double("federation", "participation", s.participation);
  s.clients_per_round =
      cfg.get_size("federation", "clients_per_round", s.clients_per_round);
  s.rounds = cfg.get_size("federation", "rounds", s.rounds);
  s.local_steps = cfg.get_size("federation", "local_steps", s.local_steps);
  s.batch_size = cfg.get_size("federation", "batch_size", s.batch_size);
  s.topology = topology_from_name(cfg.get_or("federation", "topology", "rar"));

  const std::string opt = cfg.get_or("client_opt", "optimizer", "adamw");
  if (opt == "adamw") {
    s.client_opt = ClientOptKind::kAdamW;
  } else if (opt == "sgd") {
    s.client_opt = ClientOptKind::kSgd;
  } else {
    throw ConfigError("client_opt.optimizer must be adamw|sgd, got " + opt);
  }
  s.schedule.eta_max = cfg.get_double("client_opt", "eta_max", s.schedule.eta_max);
  s.schedule.warmup_steps =
      cfg.get_size("client_opt", "warmup_steps", s.schedule.warmup_steps);
  s.schedule.decay_steps =
      cfg.get_size("client_opt", "decay_steps", s.schedule.decay_steps);
  s.schedule.alpha = cfg.get_double("client_opt", "alpha", s.schedule.alpha);
  s.adamw.beta1 = cfg.get_double("client_opt", "beta1", s.adamw.beta1);
  s.adamw.beta2 = cfg.get_double("client_opt", "beta2", s.adamw.beta2);
  s.adamw.eps = cfg.get_double("client_opt", "eps", s.adamw.eps);
  s.adamw.weight_decay =
      cfg.get_double("client_opt", "weight_decay", s.adamw.weight_decay);
  s.adamw.clip_norm =
      cfg.get_double("client_opt", "clip_norm", s.adamw.clip_norm);
  s.sgd_clip_norm =
      cfg.get_double("client_opt", "sgd_clip_norm", s.sgd_clip_norm);

  const std::string server = cfg.get_or("server_opt", "kind", "fedavg");
  if (server == "fedavg") {
    s.server_opt.kind = ServerOptKind::FedAvg;
    s.server_opt.eta = 1.0;
    s.server_opt.momentum = 0.0;
    s.server_opt.nesterov = false;
  } else if (server == "momentum") {
    s.server_opt.kind = ServerOptKind::FedMomentum;
    s.server_opt.eta = cfg.get_double("server_opt", "eta", 1.0);
    s.server_opt.momentum = cfg.get_double("server_opt", "momentum", 0.0);
    s.server_opt.nesterov = cfg.get_bool("server_opt", "nesterov", false);
  } else if (server == "diloco") {
    s.server_opt =
        diloco_server_opt(cfg.get_double("server_opt", "momentum", 0.9));
    s.server_opt.eta = cfg.get_double("server_opt", "eta", s.server_opt.eta);
    s.server_opt.nesterov =
        cfg.get_bool("server_opt", "nesterov", s.server_opt.nesterov);
  } else {
    throw ConfigError("server_opt.kind must be fedavg|momentum|diloco, got " +
                      server);
  }

  s.cost.payload_mb = cfg.get_double("cost", "payload_mb", s.cost.payload_mb);
  s.cost.bandwidth_mbps =
      cfg.get_double("cost", "bandwidth_mbps", s.cost.bandwidth_mbps);
  s.cost.throughput_bps =
      cfg.get_double("cost", "throughput_bps", s.cost.throughput_bps);
  s.cost.server_flops =
      cfg.get_double("cost", "server_flops", s.cost.server_flops);
  s.cost.channel_threshold =
      cfg.get_double("cost", "channel_threshold", s.cost.channel_threshold);
  s.bandwidth_matrix_file = cfg.get_or("cost", "bandwidth_matrix", "");
  const std::string ring = cfg.get_or("cost", "ring_order", "");
  s.ring_order.clear();
  if (!ring.empty()) {
    for (auto& part : split(ring, ',')) {
      if (part.empty()) continue;
      s.ring_order.push_back(
          static_cast<std::size_t>(parse_u64(part, "cost.ring_order")));
    }
  }

  const std::string post = cfg.get_or("post", "policy", "identity");
  if (post == "identity") {
    s.post.kind = PostProcessPolicy::Kind::kIdentity;
  } else if (post == "clip_update") {
    s.post.kind = PostProcessPolicy::Kind::kClipUpdateNorm;
  } else {
    throw ConfigError("post.policy must be identity|clip_update, got " + post);
  }
  s.post.threshold = cfg.get_double("post", "threshold", s.post.threshold);

  s.n_workers = cfg.get_size("centralized", "n_workers", s.n_workers);
  s.global_batch = cfg.get_size("centralized", "global_batch", s.global_batch);
  s.total_steps = cfg.get_size("centralized", "total_steps", s.total_steps);
  s.opt_reset_interval =
      cfg.get_size("centralized", "opt_reset_interval", s.opt_reset_interval);

  s.validate();
  return s;
}

KvConfig ExperimentSpec::to_config() const {
  KvConfig c;
  c.set("run", "name", name);
  c.set("run", "mode",
        mode == RunMode::kFederated ? "federated" : "centralized");
  c.set("run", "seed", std::to_string(seed));
  c.set("run", "model_seed", std::to_string(model_seed));
  c.set("run", "data_seed", std::to_string(data_seed));
  c.set("run", "threads", KvConfig::format_size(threads));
  c.set("run", "eval_every", KvConfig::format_size(eval_every));
  c.set("run", "eval_sequences", KvConfig::format_size(eval_sequences));
  c.set("run", "eval_batch", KvConfig::format_size(eval_batch));
  c.set("run", "client_checkpoints", client_checkpoints ? "true" : "false");
  c.set("run", "checkpoint_every", KvConfig::format_size(checkpoint_every));
  c.set("model", "n_blocks", KvConfig::format_size(model.n_blocks));
  c.set("model", "d_model", KvConfig::format_size(model.d_model));
  c.set("model", "n_heads", KvConfig::format_size(model.n_heads));
  c.set("model", "expansion_ratio",
        KvConfig::format_size(model.expansion_ratio));
  c.set("model", "vocab_size", KvConfig::format_size(model.vocab_size));
  c.set("model", "seq_len", KvConfig::format_size(model.seq_len));
  c.set("data", "policy",
        data_policy == ShardPlan::Policy::kIid ? "iid" : "by_source");
  c.set("data", "style", style);
  c.set("data", "styles", join(styles, ','));
  c.set("data", "corpus_tokens", KvConfig::format_size(corpus_tokens));
  c.set("data", "clients_per_source",
        KvConfig::format_size(clients_per_source));
  c.set("federation", "population", KvConfig::format_size(population));
  c.set("federation", "participation", fmt(participation));
  c.set("federation", "clients_per_round",
        KvConfig::format_size(clients_per_round));
  c.set("federation", "rounds", KvConfig::format_size(rounds));
  c.set("federation", "local_steps", KvConfig::format_size(local_steps));
  c.set("federation", "batch_size", KvConfig::format_size(batch_size));
  c.set("federation", "topology", topology_name(topology));
  c.set("client_opt", "optimizer",
        client_opt == ClientOptKind::kAdamW ? "adamw" : "sgd");
  c.set("client_opt", "eta_max", fmt(schedule.eta_max));
  c.set("client_opt", "warmup_steps",
        KvConfig::format_size(schedule.warmup_steps));
  c.set("client_opt", "decay_steps",
        KvConfig::format_size(schedule.decay_steps));
  c.set("client_opt", "alpha", fmt(schedule.alpha));
  c.set("client_opt", "beta1", fmt(adamw.beta1));
  c.set("client_opt", "beta2", fmt(adamw.beta2));
  c.set("client_opt", "eps", fmt(adamw.eps));
  c.set("client_opt", "weight_decay", fmt(adamw.weight_decay));
  c.set("client_opt", "clip_norm", fmt(adamw.clip_norm));
  c.set("client_opt", "sgd_clip_norm", fmt(sgd_clip_norm));
  c.set("server_opt", "kind",
        server_opt.kind == ServerOptKind::FedAvg ? "fedavg" : "momentum");
  c.set("server_opt", "eta", fmt(server_opt.eta));
  c.set("server_opt", "momentum", fmt(server_opt.momentum));
  c.set("server_opt", "nesterov", server_opt.nesterov ? "true" : "false");
  c.set("cost", "payload_mb", fmt(cost.payload_mb));
  c.set("cost", "bandwidth_mbps", fmt(cost.bandwidth_mbps));
  c.set("cost", "throughput_bps", fmt(cost.throughput_bps));
  c.set("cost", "server_flops", fmt(cost.server_flops));
  c.set("cost", "channel_threshold", fmt(cost.channel_threshold));
  c.set("cost", "bandwidth_matrix", bandwidth_matrix_file);
  {
    std::vector<std::string> ring;
    for (auto r : ring_order) ring.push_back(std::to_string(r));
    c.set("cost", "ring_order", join(ring, ','));
  }
  c.set("post", "policy",
        post.kind == PostProcessPolicy::Kind::kIdentity ? "identity"
                                                        : "clip_update");
  c.set("post", "threshold", fmt(post.threshold));
  c.set("centralized", "n_workers", KvConfig::format_size(n_workers));
  c.set("centralized", "global_batch", KvConfig::format_size(global_batch));
  c.set("centralized", "total_steps", KvConfig::format_size(total_steps));
  c.set("centralized", "opt_reset_interval",
        KvConfig::format_size(opt_reset_interval));
  return c;
}

// --- run plumbing ----------------------------------------------------------

namespace {

std::shared_ptr<const ShardPlan> build_plan(const ExperimentSpec& spec) {
  const std::size_t shards =
      spec.mode == RunMode::kFederated ? spec.population : spec.n_workers;
  if (spec.data_policy == ShardPlan::Policy::kIid) {
    Corpus corpus = generate_corpus(spec.style, spec.corpus_tokens,
                                    spec.data_seed, spec.model.vocab_size);
    return std::make_shared<const ShardPlan>(partition_iid(
        std::move(corpus), shards, spec.model.seq_len, spec.data_seed));
  }
  std::vector<Corpus> corpora;
  corpora.reserve(spec.styles.size());
  for (const auto& style : spec.styles) {
    corpora.push_back(generate_corpus(style, spec.corpus_tokens, spec.data_seed,
                                      spec.model.vocab_size));
  }
  std::size_t cps = spec.clients_per_source;
  if (spec.mode == RunMode::kCentralized) {
    if (shards % corpora.size() != 0) {
      throw ConfigError(
          "centralized by-source run needs workers divisible by styles");
    }
    cps = shards / corpora.size();
  }
  return std::make_shared<const ShardPlan>(
      partition_by_source(std::move(corpora), cps, spec.model.seq_len));
}

std::vector<Batch> build_eval_batches(const ExperimentSpec& spec) {
  const std::vector<std::string> styles =
      spec.data_policy == ShardPlan::Policy::kIid
          ? std::vector<std::string>{spec.style}
          : spec.styles;
  const std::size_t per_style = spec.eval_sequences / styles.size();
  const std::size_t bl = spec.model.seq_len + 1;
  std::vector<Batch> batches;
  Batch cur;
  cur.seq_len = spec.model.seq_len;
  for (const auto& style : styles) {
    // held-out slice: same generator family, disjoint seed stream
    Corpus c = generate_corpus(style, per_style * bl,
                               mix_seed(spec.data_seed, 0x4576616cULL),
                               spec.model.vocab_size);
    for (std::size_t s = 0; s < per_style; ++s) {
      for (std::size_t t = 0; t < spec.model.seq_len; ++t) {
        cur.inputs.push_back(static_cast<std::int32_t>(c.tokens[s * bl + t]));
        cur.targets.push_back(
            static_cast<std::int32_t>(c.tokens[s * bl + t + 1]));
      }
      cur.batch_size += 1;
      if (cur.batch_size == spec.eval_batch) {
        batches.push_back(cur);
        cur.inputs.clear();
        cur.targets.clear();
        cur.batch_size = 0;
      }
    }
  }
  if (cur.batch_size != 0) batches.push_back(cur);
  return batches;
}

struct CsvRow {
  std::string line;
  std::size_t round = 0;
  double eval_ppl = std::numeric_limits<double>::quiet_NaN();
  double t_cum_s = 0.0;
};

std::vector<CsvRow> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty CSV: " + path.string());
  if (line != kRoundsCsvHeader) {
    throw ParseError("unexpected CSV header in " + path.string());
  }
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != 9) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected 9 columns");
    }
    CsvRow row;
    row.line = line;
    try {
      row.round = std::stoull(parts[0]);
      row.eval_ppl = parts[3].empty()
                         ? std::numeric_limits<double>::quiet_NaN()
                         : std::stod(parts[3]);
      row.t_cum_s = std::stod(parts[7]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": malformed row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string csv_row(std::size_t round, const std::vector<std::size_t>& sampled,
                    double mean_loss, double eval_ppl, double t_local,
                    double t_comm, double t_agg, double t_cum, double bytes) {
  std::string ids;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    if (i) ids += ';';
    ids += std::to_string(sampled[i]);
  }
  const std::string eval = std::isnan(eval_ppl) ? "" : fmt(eval_ppl);
  return std::to_string(round) + "," + ids + "," + fmt(mean_loss) + "," + eval +
         "," + fmt(t_local) + "," + fmt(t_comm) + "," + fmt(t_agg) + "," +
         fmt(t_cum) + "," + fmt(bytes);
}

struct PersistedState {
  std::size_t next_round = 0;  // rounds (federated) or steps (centralized)
  double t_cum = 0.0;
  double initial_ppl = 0.0;
  std::uint64_t sync_events = 0;
  double total_bytes = 0.0;
  std::vector<std::uint64_t> cursors;
  std::size_t opt_step_count = 0;  // centralized Adam bookkeeping
};

void write_state(const std::filesystem::path& path, const PersistedState& st) {
  json j;
  j["format"] = 1;
  j["next_round"] = st.next_round;
  j["t_cum"] = st.t_cum;
  j["initial_ppl"] = st.initial_ppl;
  j["sync_events"] = st.sync_events;
  j["total_bytes"] = st.total_bytes;
  j["cursors"] = st.cursors;
  j["opt_step_count"] = st.opt_step_count;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

PersistedState read_state(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) {
    throw IoError("cannot open " + path.string() + " (nothing to resume?)");
  }
  PersistedState st;
  try {
    json j = json::parse(f);
    st.next_round = j.at("next_round").get<std::size_t>();
    st.t_cum = j.at("t_cum").get<double>();
    st.initial_ppl = j.at("initial_ppl").get<double>();
    st.sync_events = j.at("sync_events").get<std::uint64_t>();
    st.total_bytes = j.at("total_bytes").get<double>();
    st.cursors = j.at("cursors").get<std::vector<std::uint64_t>>();
    st.opt_step_count = j.at("opt_step_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return st;
}

void write_summary(const std::filesystem::path& path,
                   const ExperimentSpec& spec, const RunOutcome& out) {
  json j;
  j["name"] = spec.name;
  j["mode"] = spec.mode == RunMode::kFederated ? "federated" : "centralized";
  j["initial_ppl"] = out.initial_ppl;
  j["final_ppl"] = out.final_ppl;
  j["rounds_completed"] = out.rounds_completed;
  j["sync_events"] = out.sync_events;
  j["total_bytes"] = out.total_bytes;
  j["simulated_seconds"] = out.simulated_seconds;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

void log_line(const std::filesystem::path& dir, const std::string& msg) {
  std::ofstream f(dir / "log.txt", std::ios::app);
  f << msg << "\n";
}

// Rewrites rounds.csv keeping only rows before `next_round`.
void trim_csv(const std::filesystem::path& path, std::size_t next_round) {
  std::vector<CsvRow> kept;
  for (auto& row : read_csv_rows(path)) {
    if (row.round < next_round) kept.push_back(std::move(row));
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot rewrite " + path.string());
  f << kRoundsCsvHeader << "\n";
  for (const auto& row : kept) f << row.line << "\n";
}

// Centralized mode shares the canonical pieces (streams, mean, optimizer
// steps) with the data-parallel baseline but owns its loop so it can
// checkpoint, resume and emit per-step rows.
RunOutcome run_centralized_loop(
    const ExperimentSpec& spec, const std::filesystem::path& out_dir,
    bool resume, std::size_t halt_after, std::shared_ptr<const ShardPlan> plan,
    const TransformerModel& model,
    const std::function<double(const ParamVector&)>& eval_fn,
    const CostModelParams& cost, const std::filesystem::path& ckpt_path,
    const std::filesystem::path& state_path,
    const std::filesystem::path& csv_path) {
  const std::size_t n = spec.n_workers;
  const std::size_t per_worker = spec.global_batch / n;
  if (plan->n_clients() < n) {
    throw ConfigError("shard plan covers fewer shards than workers");
  }
  const auto adam_m_path = out_dir / "adam_m.phck";
  const auto adam_v_path = out_dir / "adam_v.phck";

  ParamVector theta = model.init_params(spec.model_seed);
  AdamWState opt = AdamWState::fresh(spec.adamw, theta);
  PersistedState st;
  st.cursors.assign(n, 0);
  std::ofstream csv;
  if (resume) {
    st = read_state(state_path);
    if (st.cursors.size() != n) {
      throw IntegrityError("resume: worker count changed");
    }
    Checkpoint ck = read_checkpoint(ckpt_path);
    if (ck.meta.round != st.next_round) {
      throw IntegrityError("resume: checkpoint step disagrees with state.json");
    }
    theta = std::move(ck.params);
    if (spec.client_opt == ClientOptKind::kAdamW && st.next_round > 0) {
      opt.m = read_checkpoint(adam_m_path).params;
      opt.v = read_checkpoint(adam_v_path).params;
      opt.step_count = st.opt_step_count;
    }
    trim_csv(csv_path, st.next_round);
    csv.open(csv_path, std::ios::app);
    log_line(out_dir, "resumed at step " + std::to_string(st.next_round));
  } else {
    st.initial_ppl = eval_fn ? eval_fn(theta) : 0.0;
    csv.open(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << kRoundsCsvHeader << "\n";
  }

  std::vector<BatchStream> streams;
  streams.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    streams.emplace_back(plan, w, per_worker, plan->seq_len(),
                         stream_seed(spec.seed, w), st.cursors[w]);
  }

  RunOutcome out;
  out.run_dir = out_dir;
  out.initial_ppl = st.initial_ppl;

  const double step_seconds = 1.0 / cost.throughput_bps;
  const std::size_t ck_every =
      spec.checkpoint_every > 0 ? spec.checkpoint_every : 64;
  std::vector<ParamVector> worker_grads(n);
  std::vector<double> worker_loss(n, 0.0);
  std::size_t executed = 0;
  for (std::size_t t = st.next_round; t < spec.total_steps; ++t) {
    if (spec.opt_reset_interval > 0 && t % spec.opt_reset_interval == 0) {
      opt = AdamWState::fresh(spec.adamw, theta);
    }
    std::vector<Batch> batches;
    batches.reserve(n);
    for (std::size_t w = 0; w < n; ++w) batches.push_back(streams[w].next());
    for (std::size_t w = 0; w < n; ++w) {
      ForwardResult fwd = model.forward_loss(theta, batches[w]);
      worker_loss[w] = fwd.loss.item();
      backward(fwd.loss);
      worker_grads[w] = model.collect_grads(fwd);
    }
    double loss = 0.0;
    for (std::size_t w = 0; w < n; ++w) loss += worker_loss[w];
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) {
      throw DivergenceError(
          "centralized run diverged at step " + std::to_string(t), 0, 0, t);
    }
    std::vector<const ParamVector*> grad_ptrs;
    grad_ptrs.reserve(n);
    for (const auto& g : worker_grads) grad_ptrs.push_back(&g);
    const ParamVector grad = ParamVector::mean(grad_ptrs);
    const double lr = lr_at(spec.schedule, t);
    if (spec.client_opt == ClientOptKind::kAdamW) {
      adamw_step(theta, grad, opt, lr);
    } else {
      sgd_step(theta, grad, lr, spec.sgd_clip_norm);
    }

    double eval = std::numeric_limits<double>::quiet_NaN();
    const bool do_eval =
        eval_fn && spec.eval_every > 0 &&
        (t % spec.eval_every == spec.eval_every - 1 ||
         t + 1 == spec.total_steps);
    if (do_eval) {
      eval = eval_fn(theta);
      out.final_ppl = eval;
    }
    const double t_comm =
        comm_time(spec.topology, n, cost.payload_mb, cost.bandwidth_mbps);
    const double t_agg = agg_time(n, cost.payload_mb, cost.server_flops);
    const double bytes = bytes_per_round(spec.topology, n, cost.payload_mb);
    st.t_cum += step_seconds + t_comm;
    st.sync_events += n > 1 ? 1 : 0;
    st.total_bytes += bytes;
    st.next_round = t + 1;
    for (std::size_t w = 0; w < n; ++w) st.cursors[w] = streams[w].cursor();
    st.opt_step_count = opt.step_count;
    csv << csv_row(t, {}, loss, eval, step_seconds, t_comm, t_agg, st.t_cum,
                   bytes)
        << "\n";
    csv.flush();

    ++executed;
    const bool halting = halt_after > 0 && executed >= halt_after;
    if ((t + 1) % ck_every == 0 || t + 1 == spec.total_steps || halting) {
      CheckpointMeta meta;
      meta.round = st.next_round;
      write_checkpoint(ckpt_path, theta, meta);
      if (spec.client_opt == ClientOptKind::kAdamW) {
        write_checkpoint(adam_m_path, opt.m, meta);
        write_checkpoint(adam_v_path, opt.v, meta);
      }
      write_state(state_path, st);
    }
    if (halting) break;
  }

  out.rounds_completed = st.next_round;
  out.sync_events = st.sync_events;
  out.total_bytes = st.total_bytes;
  out.simulated_seconds = st.t_cum;
  out.theta = theta.clone();
  if (st.next_round == spec.total_steps) {
    write_summary(out_dir / "summary.json", spec, out);
  }
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentSpec& spec,
                          const std::filesystem::path& out_dir, bool resume,
                          std::size_t halt_after) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  const auto resolved_path = out_dir / "config.resolved";
  const std::string resolved_text = spec.to_config().serialize();
  if (resume) {
    std::ifstream f(resolved_path);
    if (!f) {
      throw ConfigError("resume: no config.resolved in " + out_dir.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    if (ss.str() != resolved_text) {
      throw ConfigError(
          "resume: spec does not match the run's config.resolved");
    }
  } else {
    std::ofstream f(resolved_path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + resolved_path.string());
    f << resolved_text;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto plan = build_plan(spec);
  const TransformerModel model(spec.model);
  std::function<double(const ParamVector&)> eval_fn;
  std::vector<Batch> eval_batches;
  if (spec.eval_every > 0) {
    eval_batches = build_eval_batches(spec);
    eval_fn = [&model, &eval_batches](const ParamVector& p) {
      return model.eval_perplexity(p, eval_batches);
    };
  }

  const auto ckpt_path = out_dir / "checkpoint.phck";
  const auto state_path = out_dir / "state.json";
  const auto csv_path = out_dir / "rounds.csv";

  CostModelParams cost = spec.cost;
  cost.payload_mb = spec.effective_payload_mb();

  RunOutcome out;
  if (spec.mode == RunMode::kCentralized) {
    out = run_centralized_loop(spec, out_dir, resume, halt_after, plan, model,
                               eval_fn, cost, ckpt_path, state_path, csv_path);
  } else {
    FederationConfig fed;
    fed.population = spec.population;
    fed.clients_per_round = spec.effective_clients_per_round();
    fed.rounds = spec.rounds;
    fed.topology = spec.topology;
    fed.seed = spec.seed;

    LocalTrainConfig local;
    local.model = spec.model;
    local.adamw = spec.adamw;
    local.schedule = spec.schedule;
    local.opt = spec.client_opt;
    local.sgd_clip_norm = spec.sgd_clip_norm;
    local.local_steps = spec.local_steps;
    local.batch_size = spec.batch_size;
    local.throughput_bps = cost.throughput_bps;
    local.post = spec.post;

    RunnerOptions opts;
    opts.n_threads = spec.threads;
    opts.eval_every = spec.eval_every;
    opts.eval_fn = eval_fn;
    opts.checkpoint_path = ckpt_path;
    if (spec.client_checkpoints) {
      opts.client_checkpoint_dir = out_dir / "clients";
      std::filesystem::create_directories(opts.client_checkpoint_dir);
    }

    FederationRunner runner(fed, local, spec.server_opt, cost, plan,
                            model.init_params(spec.model_seed), opts);
    const bool momentum_server =
        spec.server_opt.kind == ServerOptKind::FedMomentum;
    const auto velocity_path = out_dir / "velocity.phck";

    PersistedState st;
    std::ofstream csv;
    if (resume) {
      st = read_state(state_path);
      if (st.cursors.size() != fed.population) {
        throw IntegrityError("resume: population changed");
      }
      Checkpoint ck = read_checkpoint(ckpt_path);
      if (ck.meta.round != st.next_round) {
        throw IntegrityError(
            "resume: checkpoint round disagrees with state.json");
      }
      ParamVector velocity = ck.params.zeros_like();
      if (momentum_server && st.next_round > 0) {
        if (!std::filesystem::exists(velocity_path)) {
          throw IntegrityError("resume: velocity.phck missing");
        }
        velocity = read_checkpoint(velocity_path).params;
      }
      runner.restore(std::move(ck.params), std::move(velocity), st.next_round,
                     st.t_cum, st.cursors);
      trim_csv(csv_path, st.next_round);
      csv.open(csv_path, std::ios::app);
      log_line(out_dir, "resumed at round " + std::to_string(st.next_round));
    } else {
      st.initial_ppl = eval_fn ? eval_fn(runner.theta()) : 0.0;
      csv.open(csv_path, std::ios::trunc);
      if (!csv) throw IoError("cannot write " + csv_path.string());
      csv << kRoundsCsvHeader << "\n";
    }
    out.initial_ppl = st.initial_ppl;

    std::size_t executed = 0;
    while (!runner.done()) {
      const RoundRecord rec = runner.run_round();
      st.sync_events += fed.clients_per_round >= 2 ? 1 : 0;
      st.total_bytes += rec.bytes_round();
      st.next_round = runner.next_round();
      st.t_cum = runner.cumulative_seconds();
      st.cursors.resize(fed.population);
      for (std::size_t c = 0; c < fed.population; ++c) {
        st.cursors[c] = runner.client_cursor(c);
      }
      csv << csv_row(rec.round, rec.sampled_ids, rec.mean_client_loss,
                     rec.eval_ppl, rec.t_local_s, rec.t_comm_s, rec.t_agg_s,
                     rec.t_cum_s, rec.bytes_round())
          << "\n";
      csv.flush();
      if (momentum_server) {
        CheckpointMeta meta;
        meta.round = st.next_round;
        write_checkpoint(velocity_path, runner.server_state().velocity, meta);
      }
      write_state(state_path, st);
      if (!std::isnan(rec.eval_ppl)) out.final_ppl = rec.eval_ppl;
      ++executed;
      if (halt_after > 0 && executed >= halt_after) break;
    }
    out.run_dir = out_dir;
    out.rounds_completed = runner.next_round();
    out.sync_events = st.sync_events;
    out.total_bytes = st.total_bytes;
    out.simulated_seconds = runner.cumulative_seconds();
    out.theta = runner.theta().clone();
    if (runner.done()) write_summary(out_dir / "summary.json", spec, out);
  }

  const auto t1 = std::chrono::steady_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
  log_line(out_dir, "run " + spec.name + ": " + std::to_string(ms) + " ms real");
  return out;
}

std::optional<double> time_to_target(const std::filesystem::path& rounds_csv,
                                     double target_ppl) {
  for (const auto& row : read_csv_rows(rounds_csv)) {
    if (!std::isnan(row.eval_ppl) && row.eval_ppl <= target_ppl) {
      return row.t_cum_s;
    }
  }
  return std::nullopt;
}

}  // namespace fedsim
