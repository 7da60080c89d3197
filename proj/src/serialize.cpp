#include "wccn/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace wccn {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("tensor container: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("tensor container: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

double get_f64(std::istream& is) {
  std::uint64_t v = get_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void write_tensors(std::ostream& os,
                   const std::vector<std::pair<std::string, Tensor>>& tensors) {
  os.write("WCCN", 4);
  put_u32(os, kTensorFormatVersion);
  put_u32(os, (std::uint32_t)tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u32(os, (std::uint32_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    put_u32(os, (std::uint32_t)t.rank());
    for (auto d : t.shape()) put_u64(os, d);
    for (double v : t.data()) put_f64(os, v);
  }
}

std::vector<std::pair<std::string, Tensor>> read_tensors(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "WCCN", 4) != 0)
    throw std::runtime_error("tensor container: bad magic");
  std::uint32_t version = get_u32(is);
  if (version != kTensorFormatVersion)
    throw std::runtime_error("tensor container: unsupported version " +
                             std::to_string(version));
  std::uint32_t count = get_u32(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t nlen = get_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    std::size_t sz = 1;
    for (auto& d : shape) {
      d = (std::size_t)get_u64(is);
      sz *= d;
    }
    std::vector<double> data(sz);
    for (auto& v : data) v = get_f64(is);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  return out;
}

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_tensors(os, tensors);
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_tensors(is);
}

}  // namespace wccn
