#include "sphf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "sphf/image.hpp"

namespace sphf {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t b) { return a * b; });
}

void write_tensors(std::ostream& out, const std::vector<Tensor>& tensors) {
  out.write("SPHF", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
    if (t.shape.size() > 0xff) throw std::invalid_argument("tensor rank too large");
    if (t.numel() != t.data.size()) throw std::invalid_argument("tensor '" + t.name + "' shape/data mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  }
  if (!out) throw IoError("checkpoint write failed");
}

std::vector<Tensor> read_tensors(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPHF", 4) != 0) throw IoError("not an SPHF checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in);
  std::vector<Tensor> out(count);
  for (auto& t : out) {
    t.name.resize(get<std::uint16_t>(in));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw IoError("checkpoint truncated");
    t.shape.resize(get<std::uint8_t>(in));
    for (auto& d : t.shape) d = get<std::uint32_t>(in);
    t.data.resize(t.numel());
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4)))
      throw IoError("checkpoint truncated");
  }
  return out;
}

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    write_tensors(out, tensors);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into '" + path + "': " + ec.message());
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_tensors(in);
}

const Tensor* find_tensor(const std::vector<Tensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
std::vector<Tensor> tensors_from(const ParamSet<T>& params, const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    Tensor t{prefix + p.name, p.shape, std::vector<float>(p.data.size())};
    for (std::size_t i = 0; i < p.data.size(); ++i) t.data[i] = static_cast<float>(p.data[i]);
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
void load_into(ParamSet<T>& params, const std::vector<Tensor>& tensors, const std::string& prefix) {
  for (auto& p : params) {
    const Tensor* t = find_tensor(tensors, prefix + p.name);
    if (!t) throw IoError("checkpoint lacks tensor '" + prefix + p.name + "'");
    if (t->shape != p.shape) throw IoError("tensor '" + t->name + "' has a different shape");
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<T>(t->data[i]);
  }
}

template std::vector<Tensor> tensors_from<float>(const ParamSet<float>&, const std::string&);
template std::vector<Tensor> tensors_from<double>(const ParamSet<double>&, const std::string&);
template void load_into<float>(ParamSet<float>&, const std::vector<Tensor>&, const std::string&);
template void load_into<double>(ParamSet<double>&, const std::vector<Tensor>&, const std::string&);

}  // namespace sphf
