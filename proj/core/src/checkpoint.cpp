#include "fedsim/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "fedsim/errors.h"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

namespace fedsim {

namespace {

constexpr std::uint64_t kCrcPoly = 0xC96C5795D7870F42ULL;  // reflected form

const std::uint64_t* crc_table() {
  static std::uint64_t table[256];
  static bool init = [] {
    for (std::uint64_t i = 0; i < 256; ++i) {
      std::uint64_t crc = i;
      for (int b = 0; b < 8; ++b) {
        crc = (crc >> 1) ^ ((crc & 1) ? kCrcPoly : 0);
      }
      table[i] = crc;
    }
    return true;
  }();
  (void)init;
  return table;
}

constexpr char kMagic[4] = {'P', 'H', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) {
    throw IntegrityError("checkpoint truncated");
  }
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

std::uint64_t crc64_update(std::uint64_t crc, const void* data, std::size_t len) {
  const std::uint64_t* table = crc_table();
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    crc = (crc >> 8) ^ table[(crc ^ p[i]) & 0xFF];
  }
  return crc;
}

std::uint64_t crc64(const void* data, std::size_t len) {
  return ~crc64_update(~0ULL, data, len);
}

void write_checkpoint(const std::filesystem::path& path, const ParamVector& params,
                      const CheckpointMeta& meta) {
  // Entry table + payload first; the header checksum covers these bytes.
  std::vector<std::uint8_t> body;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamEntry& e = params.entry(i);
    put<std::uint32_t>(body, static_cast<std::uint32_t>(e.name.size()));
    body.insert(body.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(body, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put<std::uint64_t>(body, d);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& vals = *params.entry(i).values;
    const auto* p = reinterpret_cast<const std::uint8_t*>(vals.data());
    body.insert(body.end(), p, p + vals.size() * sizeof(double));
  }

  std::vector<std::uint8_t> head;
  head.insert(head.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(head, kVersion);
  put<std::uint64_t>(head, meta.round);
  put<std::uint64_t>(head, static_cast<std::uint64_t>(params.total_len()));
  put<std::uint64_t>(head, crc64(body.data(), body.size()));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(head.data()),
            static_cast<std::streamsize>(head.size()));
    f.write(reinterpret_cast<const char*>(body.data()),
            static_cast<std::streamsize>(body.size()));
    f.flush();
    if (!f.good()) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " +
                        ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());

  std::size_t off = 0;
  if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw IntegrityError("not a checkpoint file: " + path.string());
  }
  off = 4;
  const auto version = take<std::uint32_t>(raw, off);
  if (version != kVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint out;
  out.meta.version = version;
  out.meta.round = take<std::uint64_t>(raw, off);
  const auto param_count = take<std::uint64_t>(raw, off);
  const auto stored_crc = take<std::uint64_t>(raw, off);

  if (crc64(raw.data() + off, raw.size() - off) != stored_crc) {
    throw IntegrityError("checkpoint checksum mismatch: " + path.string());
  }

  // Entry table ends when the declared scalar count is reached.
  std::vector<std::pair<std::string, Shape>> entries;
  std::uint64_t seen = 0;
  while (seen < param_count) {
    const auto name_len = take<std::uint32_t>(raw, off);
    if (off + name_len > raw.size()) throw IntegrityError("checkpoint truncated");
    std::string name(reinterpret_cast<const char*>(raw.data() + off), name_len);
    off += name_len;
    const auto rank = take<std::uint32_t>(raw, off);
    Shape shape(rank);
    for (auto& d : shape) d = take<std::uint64_t>(raw, off);
    seen += shape_numel(shape);
    entries.emplace_back(std::move(name), std::move(shape));
  }
  if (seen != param_count) {
    throw IntegrityError("checkpoint entry table does not sum to param_count");
  }

  for (auto& [name, shape] : entries) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> vals(n);
    if (off + n * sizeof(double) > raw.size()) {
      throw IntegrityError("checkpoint truncated");
    }
    std::memcpy(vals.data(), raw.data() + off, n * sizeof(double));
    off += n * sizeof(double);
    out.params.add(name, shape, std::move(vals));
  }
  if (off != raw.size()) {
    throw IntegrityError("checkpoint has trailing bytes");
  }
  return out;
}

}  // namespace fedsim
