#include "qdt/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "qdt/errors.hpp"

namespace qdt::nn {

namespace {
constexpr char kMagic[8] = {'Q', 'D', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t x) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((x >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return x;
}
}  // namespace

void save_checkpoint(const std::vector<const ParameterStore*>& stores,
                     const std::string& path,
                     const std::string& metadata_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  write_u64(os, metadata_json.size());
  os.write(metadata_json.data(),
           static_cast<std::streamsize>(metadata_json.size()));
  std::uint64_t n = 0;
  for (const ParameterStore* s : stores) n += s->size();
  write_u64(os, n);
  for (const ParameterStore* s : stores) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      const Parameter& p = s->at(i);
      write_u64(os, p.name.size());
      os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      write_u64(os, p.value.n_rows);
      write_u64(os, p.value.n_cols);
      os.write(reinterpret_cast<const char*>(p.value.v.data()),
               static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
    }
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

void save_checkpoint(const ParameterStore& params, const std::string& path,
                     const std::string& metadata_json) {
  save_checkpoint(std::vector<const ParameterStore*>{&params}, path,
                  metadata_json);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw SchemaError("not a checkpoint file: " + path);
  }
  LoadedCheckpoint ckpt;
  const std::uint64_t meta_len = read_u64(is);
  ckpt.metadata_json.resize(meta_len);
  is.read(ckpt.metadata_json.data(), static_cast<std::streamsize>(meta_len));
  const std::uint64_t n = read_u64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rows = read_u64(is);
    const std::uint64_t cols = read_u64(is);
    Tensor t(rows, cols);
    is.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!is) throw SchemaError("truncated checkpoint: " + path);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void LoadedCheckpoint::restore_into(
    const std::vector<ParameterStore*>& stores) const {
  std::size_t expected = 0;
  for (const ParameterStore* s : stores) expected += s->size();
  if (tensors.size() != expected) {
    throw SchemaError("checkpoint has " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(expected));
  }
  for (const auto& [name, t] : tensors) {
    ParameterStore* owner = nullptr;
    for (ParameterStore* s : stores) {
      if (s->has(name)) {
        owner = s;
        break;
      }
    }
    if (owner == nullptr) {
      throw SchemaError("checkpoint tensor '" + name + "' unknown to model");
    }
    Parameter& p = owner->get(name);
    if (!p.value.same_shape(t)) {
      throw SchemaError("checkpoint tensor '" + name + "' has wrong shape");
    }
    p.value = t;
  }
}

void LoadedCheckpoint::restore_into(ParameterStore& params) const {
  restore_into(std::vector<ParameterStore*>{&params});
}

}  // namespace qdt::nn
