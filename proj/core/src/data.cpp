#include "fedsim/data.h"

#include <cstring>
#include <fstream>

#include "fedsim/errors.h"
#include "fedsim/rng.h"

namespace fedsim {

namespace {

constexpr char kMagic[4] = {'P', 'H', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

struct StyleDef {
  const char* name;
  std::uint32_t mult;
  std::uint32_t add;
};

// Affine successor maps; multipliers are odd so the structured branch cycles
// through the whole band for power-of-two band sizes.
constexpr StyleDef kStyles[] = {
    {"academic", 1, 1},
    {"web", 3, 1},
    {"reference", 5, 2},
    {"prose", 7, 3},
};

std::size_t style_index(const std::string& style) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (style == kStyles[i].name) return i;
  }
  throw ConfigError("unknown data style: " + style);
}

}  // namespace

std::vector<std::string> known_styles() {
  return {"academic", "web", "reference", "prose"};
}

Corpus generate_corpus(const std::string& style, std::size_t length,
                       std::uint64_t seed, std::uint32_t vocab_size) {
  const std::size_t si = style_index(style);
  if (vocab_size < 8 || vocab_size % 4 != 0) {
    throw ConfigError("corpus vocab_size must be a multiple of 4, >= 8");
  }
  if (length == 0) throw ConfigError("corpus length must be > 0");
  const std::uint32_t band = vocab_size / 4;
  const std::uint32_t base = static_cast<std::uint32_t>(si) * band;
  const StyleDef& def = kStyles[si];

  Corpus c;
  c.vocab_size = vocab_size;
  c.source_label = style;
  c.tokens.resize(length);
  Rng rng(mix_seed(seed, 0x436f7270ULL, si));
  std::uint32_t cur = static_cast<std::uint32_t>(rng.uniform_u64(band));
  c.tokens[0] = static_cast<std::uint16_t>(base + cur);
  for (std::size_t i = 1; i < length; ++i) {
    if (rng.uniform() < 0.8) {
      cur = (def.mult * cur + def.add) % band;
    } else {
      cur = static_cast<std::uint32_t>(rng.uniform_u64(band));
    }
    c.tokens[i] = static_cast<std::uint16_t>(base + cur);
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (corpus.tokens.size() > 0xFFFFFFFFULL) {
    throw IoError("corpus too long for on-disk format");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(kMagic, 4);
  const std::uint32_t ver = kVersion, vocab = corpus.vocab_size,
                      len = static_cast<std::uint32_t>(corpus.tokens.size());
  f.write(reinterpret_cast<const char*>(&ver), 4);
  f.write(reinterpret_cast<const char*>(&vocab), 4);
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(reinterpret_cast<const char*>(corpus.tokens.data()),
          static_cast<std::streamsize>(corpus.tokens.size() * 2));
  f.flush();
  if (!f.good()) throw IoError("short write to " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path, const std::string& label) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t ver = 0, vocab = 0, len = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&ver), 4);
  f.read(reinterpret_cast<char*>(&vocab), 4);
  f.read(reinterpret_cast<char*>(&len), 4);
  if (!f.good() || std::memcmp(magic, kMagic, 4) != 0) {
    throw IntegrityError("not a corpus file: " + path.string());
  }
  if (ver != kVersion) {
    throw IntegrityError("unsupported corpus version " + std::to_string(ver));
  }
  Corpus c;
  c.vocab_size = vocab;
  c.source_label = label;
  c.tokens.resize(len);
  f.read(reinterpret_cast<char*>(c.tokens.data()),
         static_cast<std::streamsize>(std::size_t(len) * 2));
  if (!f.good()) throw IntegrityError("corpus truncated: " + path.string());
  for (std::uint16_t t : c.tokens) {
    if (t >= vocab) throw IntegrityError("corpus token out of vocab range");
  }
  return c;
}

const std::vector<BlockRef>& ShardPlan::client_blocks(std::size_t client) const {
  if (client >= assignments_.size()) {
    throw LookupError("unknown client id " + std::to_string(client));
  }
  return assignments_[client];
}

std::size_t ShardPlan::client_tokens(std::size_t client) const {
  return client_blocks(client).size() * block_len();
}

const Corpus& ShardPlan::corpus(std::size_t source) const {
  if (source >= corpora_->size()) {
    throw LookupError("unknown source index " + std::to_string(source));
  }
  return (*corpora_)[source];
}

ShardPlan partition_iid(Corpus corpus, std::size_t n_shards, std::size_t seq_len,
                        std::uint64_t seed) {
  if (n_shards == 0) throw ConfigError("partition: n_shards must be >= 1");
  if (seq_len == 0) throw ConfigError("partition: seq_len must be >= 1");
  const std::size_t bl = seq_len + 1;
  const std::size_t n_blocks = corpus.tokens.size() / bl;
  if (n_blocks < n_shards) {
    throw ConfigError("corpus too short: " + std::to_string(n_blocks) +
                      " blocks for " + std::to_string(n_shards) + " shards");
  }
  std::vector<std::uint32_t> order(n_blocks);
  for (std::size_t i = 0; i < n_blocks; ++i) order[i] = static_cast<std::uint32_t>(i);
  Rng rng(mix_seed(seed, 0x53686172ULL));
  rng.shuffle(order);

  ShardPlan plan;
  plan.policy_ = ShardPlan::Policy::kIid;
  plan.seq_len_ = seq_len;
  auto corpora = std::make_shared<std::vector<Corpus>>();
  corpora->push_back(std::move(corpus));
  plan.corpora_ = corpora;
  plan.assignments_.assign(n_shards, {});
  for (std::size_t i = 0; i < n_blocks; ++i) {
    plan.assignments_[i % n_shards].push_back(
        BlockRef{0, static_cast<std::uint64_t>(order[i]) * bl});
  }
  return plan;
}

ShardPlan partition_by_source(std::vector<Corpus> corpora,
                              std::size_t clients_per_source, std::size_t seq_len) {
  if (corpora.empty()) throw ConfigError("partition: no corpora");
  if (clients_per_source == 0) {
    throw ConfigError("partition: clients_per_source must be >= 1");
  }
  if (seq_len == 0) throw ConfigError("partition: seq_len must be >= 1");
  const std::size_t bl = seq_len + 1;

  ShardPlan plan;
  plan.policy_ = ShardPlan::Policy::kBySource;
  plan.seq_len_ = seq_len;
  auto stored = std::make_shared<std::vector<Corpus>>(std::move(corpora));
  plan.corpora_ = stored;
  plan.assignments_.assign(stored->size() * clients_per_source, {});
  for (std::size_t s = 0; s < stored->size(); ++s) {
    const std::size_t n_blocks = (*stored)[s].tokens.size() / bl;
    const std::size_t per_client = n_blocks / clients_per_source;
    if (per_client == 0) {
      throw ConfigError("source " + (*stored)[s].source_label +
                        " too short for " + std::to_string(clients_per_source) +
                        " clients");
    }
    for (std::size_t c = 0; c < clients_per_source; ++c) {
      auto& blocks = plan.assignments_[s * clients_per_source + c];
      const std::size_t first = c * per_client;
      for (std::size_t b = 0; b < per_client; ++b) {
        blocks.push_back(BlockRef{static_cast<std::uint32_t>(s),
                                  static_cast<std::uint64_t>(first + b) * bl});
      }
    }
  }
  return plan;
}

std::uint64_t stream_seed(std::uint64_t global_seed, std::size_t client) {
  return mix_seed(global_seed, 0x44617461ULL, client);
}

BatchStream::BatchStream(std::shared_ptr<const ShardPlan> plan, std::size_t client,
                         std::size_t batch_size, std::size_t seq_len,
                         std::uint64_t seed, std::uint64_t cursor)
    : plan_(std::move(plan)),
      client_(client),
      batch_size_(batch_size),
      seq_len_(seq_len),
      seed_(seed),
      cursor_(cursor) {
  if (!plan_) throw UsageError("stream: null plan");
  blocks_ = &plan_->client_blocks(client_);  // validates the client id
  if (batch_size_ == 0) throw ConfigError("stream: batch_size must be >= 1");
  if (seq_len_ != plan_->seq_len()) {
    throw UsageError("stream: seq_len does not match the plan's block size");
  }
}

void BatchStream::refresh_epoch(std::uint64_t epoch) {
  const std::size_t n = blocks_->size();
  perm_.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm_[i] = static_cast<std::uint32_t>(i);
  Rng rng(mix_seed(seed_, 0x45706f63ULL, client_, epoch));
  rng.shuffle(perm_);
  cached_epoch_ = epoch;
}

Batch BatchStream::next() {
  const std::size_t n = blocks_->size();
  Batch b;
  b.batch_size = batch_size_;
  b.seq_len = seq_len_;
  b.inputs.resize(batch_size_ * seq_len_);
  b.targets.resize(batch_size_ * seq_len_);
  for (std::size_t r = 0; r < batch_size_; ++r) {
    const std::uint64_t idx = cursor_ + r;
    const std::uint64_t epoch = idx / n;
    if (epoch != cached_epoch_) refresh_epoch(epoch);
    const BlockRef& ref = (*blocks_)[perm_[idx % n]];
    const auto& tokens = plan_->corpus(ref.source).tokens;
    for (std::size_t t = 0; t < seq_len_; ++t) {
      b.inputs[r * seq_len_ + t] =
          static_cast<std::int32_t>(tokens[ref.offset + t]);
      b.targets[r * seq_len_ + t] =
          static_cast<std::int32_t>(tokens[ref.offset + t + 1]);
    }
  }
  cursor_ += batch_size_;
  return b;
}

}  // namespace fedsim
