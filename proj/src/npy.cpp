#include "clusterattn/npy.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace clusterattn {
namespace {

constexpr std::string_view kMagic = "\x93NUMPY";
constexpr std::size_t kPreludeSize = 10;  // magic(6) + version(2) + header_len(2)
constexpr std::size_t kAlignment = 64;

[[noreturn]] void fail(const std::string& source, const std::string& field, const std::string& what) {
  throw FormatError(source + ": " + field + ": " + what);
}

// Minimal parser for the Python dict literal numpy writes in the header.
class HeaderParser {
 public:
  HeaderParser(std::string_view text, const std::string& source) : text_(text), source_(source) {}

  NpyHeader parse() {
    NpyHeader h;
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = quoted("header");
      expect(':');
      if (key == "descr") {
        h.descr = quoted("descr");
        have_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = boolean();
        have_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        have_shape = true;
      } else {
        fail(source_, "header", "unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!have_descr) fail(source_, "descr", "missing");
    if (!have_order) fail(source_, "fortran_order", "missing");
    if (!have_shape) fail(source_, "shape", "missing");
    return h;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(source_, "header", std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string quoted(const std::string& field) {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') fail(source_, field, "expected quoted string");
    const auto end = text_.find(q, pos_ + 1);
    if (end == std::string_view::npos) fail(source_, field, "unterminated string");
    std::string s(text_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return s;
  }

  bool boolean() {
    skip_ws();
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail(source_, "fortran_order", "expected True or False");
  }

  std::vector<std::size_t> tuple() {
    expect('(');
    std::vector<std::size_t> dims;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return dims;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail(source_, "shape", "expected integer");
      std::size_t v = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + static_cast<std::size_t>(peek() - '0');
        ++pos_;
      }
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

std::string shape_literal(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t NpyArray::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

NpyHeader parse_npy_header(std::string_view bytes, const std::string& source) {
  if (bytes.size() < kPreludeSize || bytes.substr(0, kMagic.size()) != kMagic) {
    fail(source, "magic", "not an .npy file");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  const auto minor = static_cast<unsigned char>(bytes[7]);
  if (major != 1 || minor != 0) {
    fail(source, "version", "unsupported format version " + std::to_string(major) + "." +
                                std::to_string(minor) + " (only 1.0)");
  }
  const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  if (bytes.size() < kPreludeSize + header_len) fail(source, "header", "truncated header");
  NpyHeader h = HeaderParser(bytes.substr(kPreludeSize, header_len), source).parse();
  h.data_offset = kPreludeSize + header_len;
  return h;
}

NpyArray decode_npy(std::string_view bytes, const std::string& source) {
  const NpyHeader h = parse_npy_header(bytes, source);
  if (h.descr != "<f4") fail(source, "descr", "unsupported dtype '" + h.descr + "' (only '<f4')");
  if (h.fortran_order) fail(source, "fortran_order", "Fortran-ordered arrays are not supported");

  NpyArray a;
  a.shape = h.shape;
  const std::size_t n = a.numel();
  const std::size_t payload = bytes.size() - h.data_offset;
  if (payload < n * sizeof(float)) {
    fail(source, "data", "truncated payload: expected " + std::to_string(n * sizeof(float)) +
                             " bytes, found " + std::to_string(payload));
  }
  a.data.resize(n);
  std::memcpy(a.data.data(), bytes.data() + h.data_offset, n * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : a.data) {
      auto u = std::bit_cast<std::uint32_t>(f);
      u = __builtin_bswap32(u);
      f = std::bit_cast<float>(u);
    }
  }
  return a;
}

std::string encode_npy(const NpyArray& array) {
  if (array.data.size() != array.numel()) {
    throw DimensionError("encode_npy: data length " + std::to_string(array.data.size()) +
                         " does not match shape " + shape_literal(array.shape));
  }
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': " +
                     shape_literal(array.shape) + ", }";
  // Pad with spaces so the payload starts on an aligned offset; the header
  // always ends with a newline.
  const std::size_t unpadded = kPreludeSize + dict.size() + 1;
  dict.append((kAlignment - unpadded % kAlignment) % kAlignment, ' ');
  dict.push_back('\n');

  std::string out(kMagic);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(dict.size() & 0xff));
  out.push_back(static_cast<char>((dict.size() >> 8) & 0xff));
  out += dict;
  const std::size_t offset = out.size();
  out.resize(offset + array.data.size() * sizeof(float));
  std::memcpy(out.data() + offset, array.data.data(), array.data.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = offset; i < out.size(); i += 4) {
      std::swap(out[i], out[i + 3]);
      std::swap(out[i + 1], out[i + 2]);
    }
  }
  return out;
}

NpyHeader read_npy_header(const std::filesystem::path& path) {
  return parse_npy_header(read_file(path), path.string());
}

NpyArray read_npy(const std::filesystem::path& path) {
  return decode_npy(read_file(path), path.string());
}

void write_npy(const std::filesystem::path& path, const NpyArray& array) {
  const std::string bytes = encode_npy(array);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

Tensor to_tensor(const NpyArray& array, const std::string& source) {
  if (array.shape.size() != 2) {
    fail(source, "shape", "expected rank 2, got rank " + std::to_string(array.shape.size()));
  }
  const auto rows = static_cast<Index>(array.shape[0]);
  const auto cols = static_cast<Index>(array.shape[1]);
  return Eigen::Map<const Tensor>(array.data.data(), rows, cols);
}

NpyArray from_tensor(const Tensor& t) {
  NpyArray a;
  a.shape = {static_cast<std::size_t>(t.rows()), static_cast<std::size_t>(t.cols())};
  a.data.assign(t.data(), t.data() + t.size());
  return a;
}

}  // namespace clusterattn
