#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fedsim/model.h"

namespace fedsim {

struct Corpus {
  std::vector<std::uint16_t> tokens;
  std::uint32_t vocab_size = 64;
  std::string source_label;
};

// Styles are band-separated first-order Markov chains: each style owns a
// contiguous quarter of the vocab and follows its own affine successor map
// with probability 0.8, else a uniform draw from its band.  Distinct bands
// make the style marginals trivially distinguishable; the 0.8/0.2 mix keeps
// per-token entropy comfortably below uniform.
std::vector<std::string> known_styles();
Corpus generate_corpus(const std::string& style, std::size_t length,
                       std::uint64_t seed, std::uint32_t vocab_size = 64);

// "PHDS" | u32 version | u32 vocab | u32 token count | u16 tokens (LE).
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path,
                   const std::string& label = "imported");

struct BlockRef {
  std::uint32_t source = 0;   // index into the plan's corpora
  std::uint64_t offset = 0;   // token offset of the block start
};

// Immutable assignment of disjoint (seq_len+1)-token blocks to clients.
class ShardPlan {
 public:
  enum class Policy { kIid, kBySource };

  Policy policy() const { return policy_; }
  std::size_t n_clients() const { return assignments_.size(); }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t block_len() const { return seq_len_ + 1; }
  const std::vector<BlockRef>& client_blocks(std::size_t client) const;
  std::size_t client_tokens(std::size_t client) const;
  const Corpus& corpus(std::size_t source) const;
  std::size_t n_sources() const { return corpora_->size(); }

 private:
  friend ShardPlan partition_iid(Corpus corpus, std::size_t n_shards,
                                 std::size_t seq_len, std::uint64_t seed);
  friend ShardPlan partition_by_source(std::vector<Corpus> corpora,
                                       std::size_t clients_per_source,
                                       std::size_t seq_len);
  Policy policy_ = Policy::kIid;
  std::size_t seq_len_ = 0;
  std::shared_ptr<const std::vector<Corpus>> corpora_;
  std::vector<std::vector<BlockRef>> assignments_;
};

// Shuffles the corpus's blocks with `seed` and deals them round-robin, so
// shard sizes differ by at most one block.  ConfigError if the corpus cannot
// give every shard at least one block.
ShardPlan partition_iid(Corpus corpus, std::size_t n_shards, std::size_t seq_len,
                        std::uint64_t seed);

// Source-major: source s feeds clients [s*cps, (s+1)*cps), each an equal
// contiguous run of blocks (remainder blocks are dropped).
ShardPlan partition_by_source(std::vector<Corpus> corpora,
                              std::size_t clients_per_source, std::size_t seq_len);

// Stream seed for a client's shard, derived functionally so every component
// (federated clients, centralized workers) draws the same batch sequence for
// the same shard.
std::uint64_t stream_seed(std::uint64_t global_seed, std::size_t client);

// Deterministic batch iterator over one client's shard.  Epoch order is a
// seeded permutation of the shard's blocks, reshuffled every epoch; `cursor`
// counts blocks consumed since the beginning, so a stream rebuilt from
// (plan, client, seed, cursor) continues the exact sequence.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<const ShardPlan> plan, std::size_t client,
              std::size_t batch_size, std::size_t seq_len, std::uint64_t seed,
              std::uint64_t cursor = 0);

  Batch next();
  std::uint64_t cursor() const { return cursor_; }
  std::size_t blocks_per_epoch() const { return blocks_->size(); }

 private:
  void refresh_epoch(std::uint64_t epoch);

  std::shared_ptr<const ShardPlan> plan_;
  const std::vector<BlockRef>* blocks_;
  std::size_t client_ = 0;
  std::size_t batch_size_ = 0;
  std::size_t seq_len_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t cursor_ = 0;
  std::uint64_t cached_epoch_ = ~0ULL;
  std::vector<std::uint32_t> perm_;
};

}  // namespace fedsim
