#pragma once

// Checkpoint container: "NMPMCKPT" binary tensor records plus a JSON sidecar
// for config and normalization statistics. Little-endian payloads.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nmpm/tensor.hpp"

namespace nmpm {

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const std::string& path) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw TensorError("checkpoint: truncated file " + path);
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;  // 0 = f32, 1 = f64
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'N', 'M', 'P', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<Tensor<T>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("checkpoint: cannot open " + path + " for writing");
  detail::write_bytes(os, kCheckpointMagic, 8);
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
  detail::write_bytes(os, &version, 4);
  detail::write_bytes(os, &count, 4);
  for (const auto& t : tensors) {
    const std::string& name = t.name();
    std::uint16_t nlen = static_cast<std::uint16_t>(name.size());
    detail::write_bytes(os, &nlen, 2);
    detail::write_bytes(os, name.data(), nlen);
    std::uint8_t dtype = detail::dtype_code<T>();
    std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    detail::write_bytes(os, &dtype, 1);
    detail::write_bytes(os, &rank, 1);
    for (int d : t.shape()) {
      std::uint32_t u = static_cast<std::uint32_t>(d);
      detail::write_bytes(os, &u, 4);
    }
    detail::write_bytes(os, t.values().data(), t.size() * sizeof(T));
  }
  if (!os) throw TensorError("checkpoint: write failed for " + path);
}

template <typename T>
std::vector<Tensor<T>> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("checkpoint: cannot open " + path);
  char magic[8];
  detail::read_bytes(is, magic, 8, path);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw TensorError("checkpoint: bad magic in " + path);
  std::uint32_t version = 0, count = 0;
  detail::read_bytes(is, &version, 4, path);
  detail::read_bytes(is, &count, 4, path);
  if (version != kCheckpointVersion)
    throw TensorError("checkpoint: unsupported version " + std::to_string(version));
  std::vector<Tensor<T>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t nlen = 0;
    detail::read_bytes(is, &nlen, 2, path);
    std::string name(nlen, '\0');
    detail::read_bytes(is, name.data(), nlen, path);
    std::uint8_t dtype = 0, rank = 0;
    detail::read_bytes(is, &dtype, 1, path);
    detail::read_bytes(is, &rank, 1, path);
    std::vector<int> shape(rank);
    for (int r = 0; r < rank; ++r) {
      std::uint32_t u = 0;
      detail::read_bytes(is, &u, 4, path);
      shape[static_cast<std::size_t>(r)] = static_cast<int>(u);
    }
    std::size_t n = detail::numel(shape);
    Tensor<T> t;
    if (dtype == detail::dtype_code<T>()) {
      std::vector<T> data(n);
      detail::read_bytes(is, data.data(), n * sizeof(T), path);
      t = Tensor<T>::from(std::move(data), shape);
    } else if (dtype == 0) {  // stored f32, requested f64
      std::vector<float> data(n);
      detail::read_bytes(is, data.data(), n * 4, path);
      std::vector<T> conv(n);
      for (std::size_t j = 0; j < n; ++j) conv[j] = static_cast<T>(data[j]);
      t = Tensor<T>::from(std::move(conv), shape);
    } else {  // stored f64, requested f32
      std::vector<double> data(n);
      detail::read_bytes(is, data.data(), n * 8, path);
      std::vector<T> conv(n);
      for (std::size_t j = 0; j < n; ++j) conv[j] = static_cast<T>(data[j]);
      t = Tensor<T>::from(std::move(conv), shape);
    }
    t.set_name(name);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace nmpm
