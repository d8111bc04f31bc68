#pragma once

// Reader/writer for version 1.0 .npy files holding little-endian float32
// arrays in C order. Any other dtype, Fortran order, or format version is
// rejected with a FormatError that names the offending field.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "clusterattn/tensor.hpp"

namespace clusterattn {

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

// Header fields as declared in the file, before any dtype check.
struct NpyHeader {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::size_t data_offset = 0;
};

// `source` is only used to label error messages.
NpyHeader parse_npy_header(std::string_view bytes, const std::string& source = "<memory>");
NpyArray decode_npy(std::string_view bytes, const std::string& source = "<memory>");
std::string encode_npy(const NpyArray& array);

NpyHeader read_npy_header(const std::filesystem::path& path);
NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const NpyArray& array);

// Rank-2 conversions.
Tensor to_tensor(const NpyArray& array, const std::string& source = "<memory>");
NpyArray from_tensor(const Tensor& t);

inline Tensor read_tensor(const std::filesystem::path& path) {
  return to_tensor(read_npy(path), path.string());
}
inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_npy(path, from_tensor(t));
}

}  // namespace clusterattn
