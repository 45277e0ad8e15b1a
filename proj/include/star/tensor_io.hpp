#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "star/error.hpp"
#include "star/tensor.hpp"

namespace star {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else if constexpr (std::is_same_v<T, double>) {
    return "f64";
  } else {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "tensor files support f32 and f64 only");
  }
}

}  // namespace detail

// Layout: one ASCII line "STNSR1 <dtype> <ndim> <dim...>\n", then raw
// little-endian row-major values. Scalars have ndim 0 and one value.
template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(detail::msg("cannot open '", path.string(), "' for writing"));
  std::ostringstream header;
  header << "STNSR1 " << detail::dtype_name<T>() << " " << t.ndim();
  for (int64_t d : t.shape()) header << " " << d;
  header << "\n";
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
  if (!out) throw IoError(detail::msg("failed while writing '", path.string(), "'"));
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(detail::msg("cannot open '", path.string(), "' for reading"));
  std::string line;
  if (!std::getline(in, line)) {
    throw IoError(detail::msg("'", path.string(), "': missing header line"));
  }
  std::istringstream header(line);
  std::string magic, dtype;
  int64_t ndim = -1;
  header >> magic >> dtype >> ndim;
  if (magic != "STNSR1") {
    throw IoError(detail::msg("'", path.string(), "': bad magic '", magic, "'"));
  }
  if (dtype != detail::dtype_name<T>()) {
    throw IoError(detail::msg("'", path.string(), "': dtype is ", dtype, ", expected ",
                              detail::dtype_name<T>()));
  }
  if (ndim < 0 || ndim > 8) {
    throw IoError(detail::msg("'", path.string(), "': bad ndim ", ndim));
  }
  Shape shape(static_cast<size_t>(ndim));
  for (int64_t i = 0; i < ndim; ++i) {
    if (!(header >> shape[static_cast<size_t>(i)]) || shape[static_cast<size_t>(i)] < 1) {
      throw IoError(detail::msg("'", path.string(), "': bad dimension list"));
    }
  }
  int64_t extra;
  if (header >> extra) {
    throw IoError(detail::msg("'", path.string(), "': trailing tokens in header"));
  }
  const int64_t n = numel_of(shape);
  std::vector<T> data(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(T))));
  if (in.gcount() != n * static_cast<int64_t>(sizeof(T))) {
    throw IoError(detail::msg("'", path.string(), "': truncated payload"));
  }
  char probe;
  if (in.read(&probe, 1); in.gcount() != 0) {
    throw IoError(detail::msg("'", path.string(), "': trailing bytes after payload"));
  }
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

}  // namespace star
