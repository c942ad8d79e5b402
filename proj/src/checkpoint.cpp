#include "cmota/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as in-memory little-endian bytes");

namespace cmota::io {

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + tmp);
    os.write("CMOT", 4);
    put_u32(os, c.version);
    put_u64(os, c.config_json.size());
    put_bytes(os, c.config_json.data(), c.config_json.size());
    put_u64(os, c.extra_json.size());
    put_bytes(os, c.extra_json.data(), c.extra_json.size());
    put_u32(os, static_cast<uint32_t>(c.records.size()));
    for (const auto& r : c.records) {
      put_u32(os, static_cast<uint32_t>(r.name.size()));
      put_bytes(os, r.name.data(), r.name.size());
      os.put(static_cast<char>(r.dtype));
      put_u32(os, static_cast<uint32_t>(r.dims.size()));
      for (int64_t d : r.dims) put_u64(os, static_cast<uint64_t>(d));
      put_u64(os, r.payload.size());
      put_bytes(os, r.payload.data(), r.payload.size());
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CMOT", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Container c;
  c.version = get_u32(is);
  if (c.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(c.version));
  c.config_json.resize(get_u64(is));
  is.read(c.config_json.data(), static_cast<std::streamsize>(c.config_json.size()));
  c.extra_json.resize(get_u64(is));
  is.read(c.extra_json.data(), static_cast<std::streamsize>(c.extra_json.size()));
  const uint32_t n = get_u32(is);
  for (uint32_t i = 0; i < n; ++i) {
    TensorRecord r;
    r.name.resize(get_u32(is));
    is.read(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    r.dtype = static_cast<uint8_t>(is.get());
    const uint32_t nd = get_u32(is);
    for (uint32_t d = 0; d < nd; ++d) r.dims.push_back(static_cast<int64_t>(get_u64(is)));
    r.payload.resize(get_u64(is));
    is.read(reinterpret_cast<char*>(r.payload.data()), static_cast<std::streamsize>(r.payload.size()));
    c.records.push_back(std::move(r));
  }
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
  return c;
}

RunConfig read_checkpoint_config(const std::string& path) {
  Container c = read_container(path);
  return run_config_from_json(nlohmann::json::parse(c.config_json));
}

}  // namespace cmota::io
