#include "mile/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "mile/error.hpp"

namespace mile {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'M', 'I', 'L', 'O', '1'};
constexpr char kOptimizerMagic[4] = {'O', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof value)) {
    throw IoError("'" + path + "': truncated checkpoint");
  }
  return value;
}

void put_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint: tensor '" + t.name + "' shape does not match its values");
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
}

std::vector<NamedTensor> get_tensors(std::istream& is, const std::string& path) {
  const auto count = get<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get<std::uint32_t>(is, path));
    if (!is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
      throw IoError("'" + path + "': truncated tensor name");
    }
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("'" + path + "': implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(is, path);
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw IoError("'" + path + "': implausible dimension");
      t.shape.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    t.values.resize(n);
    if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw IoError("'" + path + "': truncated tensor data");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(os, file.config_json.size());
  os.write(file.config_json.data(), static_cast<std::streamsize>(file.config_json.size()));
  put_tensors(os, file.tensors);
  if (file.optimizer_step) {
    os.write(kOptimizerMagic, sizeof kOptimizerMagic);
    put<std::uint64_t>(os, *file.optimizer_step);
    put_tensors(os, file.optimizer_tensors);
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

CheckpointFile read_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  }
  CheckpointFile file;
  const auto len = get<std::uint64_t>(is, path);
  if (len > (std::uint64_t{1} << 30)) throw IoError("'" + path + "': implausible header length");
  file.config_json.resize(static_cast<std::size_t>(len));
  if (!is.read(file.config_json.data(), static_cast<std::streamsize>(len))) {
    throw IoError("'" + path + "': truncated header");
  }
  file.tensors = get_tensors(is, path);
  char opt[sizeof kOptimizerMagic];
  if (is.read(opt, sizeof opt)) {
    if (std::memcmp(opt, kOptimizerMagic, sizeof opt) != 0) {
      throw IoError("'" + path + "': unexpected trailing data");
    }
    file.optimizer_step = get<std::uint64_t>(is, path);
    file.optimizer_tensors = get_tensors(is, path);
  } else if (is.gcount() != 0) {
    throw IoError("'" + path + "': unexpected trailing data");
  }
  return file;
}

}  // namespace mile
