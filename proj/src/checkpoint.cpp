#include "sortrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sortrl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write("SRTL", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.dim(i)));
    auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SRTL", 4) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  uint32_t count = get_u32(is);
  ParamStore store;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = get_u32(is);
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int64_t>(get_u64(is));
      numel *= shape[i];
    }
    std::vector<double> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    store.add(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return store;
}

}  // namespace sortrl
