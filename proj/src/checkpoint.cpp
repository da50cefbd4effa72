#include "fdepth/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace fdepth {

namespace {

constexpr std::string_view kMagic = "FDPT1";

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64(std::istream& in, const std::string& what) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != 8) throw std::runtime_error("checkpoint truncated while reading " + what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  for (const auto& p : params.entries()) {
    put_u64(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& s = p.value.shape();
    for (int ax = 0; ax < 4; ++ax) put_u64(out, static_cast<std::uint64_t>(s[ax]));
    for (double v : p.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<NamedParameter> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (in.gcount() != static_cast<std::streamsize>(kMagic.size()) || magic != kMagic) {
    throw std::runtime_error(path.string() + " is not an FDPT1 checkpoint");
  }
  std::vector<NamedParameter> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t len = get_u64(in, "name length");
    if (len > 4096) throw std::runtime_error("checkpoint name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw std::runtime_error("checkpoint truncated in name");
    std::array<std::int64_t, 4> ext{};
    for (auto& e : ext) e = static_cast<std::int64_t>(get_u64(in, "extents of " + name));
    const Shape shape{ext[0], ext[1], ext[2], ext[3]};
    if (ext[0] < 0 || ext[1] < 0 || ext[2] < 0 || ext[3] < 0 || shape.numel() > (1LL << 31)) {
      throw std::runtime_error("checkpoint record " + name + " has invalid shape");
    }
    std::vector<double> values(static_cast<std::size_t>(shape.numel()));
    for (double& v : values) v = std::bit_cast<double>(get_u64(in, "values of " + name));
    records.push_back({name, Tensor::from_values(shape, std::move(values))});
  }
  return records;
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  const auto records = read_checkpoint(path);
  std::unordered_map<std::string, const NamedParameter*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  if (by_name.size() != params.entries().size()) {
    throw std::runtime_error("checkpoint " + path.string() + " holds " + std::to_string(records.size()) +
                             " parameters, model expects " + std::to_string(params.entries().size()));
  }
  for (auto& p : params.entries()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + p.name);
    if (!(it->second->value.shape() == p.value.shape())) {
      throw std::runtime_error("parameter " + p.name + " has shape " + it->second->value.shape().str() +
                               " in checkpoint but " + p.value.shape().str() + " in model");
    }
    const auto src = it->second->value.values();
    std::copy(src.begin(), src.end(), p.value.mutable_values().begin());
  }
}

}  // namespace fdepth
