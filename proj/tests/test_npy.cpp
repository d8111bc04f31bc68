#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "clusterattn/npy.hpp"
#include "oracles.hpp"

using namespace clusterattn;
namespace fs = std::filesystem;

namespace {

// Bytes numpy 1.x/2.x writes for np.save of
// np.array([[1.5, -2, 0.25], [3, 4, 1e-3]], dtype='<f4').
std::string numpy_reference() {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }";
  dict.append(117 - dict.size(), ' ');
  dict.push_back('\n');
  std::string out = std::string("\x93NUMPY\x01\x00", 8);
  out.push_back(static_cast<char>(118));
  out.push_back('\0');
  out += dict;
  const unsigned char payload[] = {0x00, 0x00, 0xc0, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x80, 0x3e,
                                   0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x80, 0x40, 0x6f, 0x12, 0x83, 0x3a};
  out.append(reinterpret_cast<const char*>(payload), sizeof payload);
  return out;
}

std::string header_with(const std::string& dict_body, unsigned char major = 1) {
  std::string dict = dict_body;
  dict.push_back('\n');
  std::string out = std::string("\x93NUMPY", 6);
  out.push_back(static_cast<char>(major));
  out.push_back('\0');
  out.push_back(static_cast<char>(dict.size() & 0xff));
  out.push_back(static_cast<char>(dict.size() >> 8));
  return out + dict + std::string(16, '\0');
}

void expect_format_error(const std::string& bytes, const std::string& field) {
  try {
    decode_npy(bytes, "sample.npy");
    FAIL() << "expected FormatError for " << field;
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("sample.npy"), std::string::npos) << msg;
    EXPECT_NE(msg.find(field), std::string::npos) << msg;
  }
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clusterattn_npy_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Npy, DecodesNumpyOutput) {
  const NpyArray a = decode_npy(numpy_reference());
  EXPECT_EQ(a.shape, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(a.data, (std::vector<float>{1.5f, -2.0f, 0.25f, 3.0f, 4.0f, 1e-3f}));
}

TEST(Npy, EncodesLikeNumpy) {
  NpyArray a{{2, 3}, {1.5f, -2.0f, 0.25f, 3.0f, 4.0f, 1e-3f}};
  EXPECT_EQ(encode_npy(a), numpy_reference());
}

TEST(Npy, HeaderAlignedAndNewlineTerminated) {
  for (std::size_t rank = 1; rank <= 4; ++rank) {
    NpyArray a{std::vector<std::size_t>(rank, 3), std::vector<float>(std::size_t(1) << (2 * rank), 0.0f)};
    a.data.resize(a.numel());
    const std::string bytes = encode_npy(a);
    const NpyHeader h = parse_npy_header(bytes);
    EXPECT_EQ(h.data_offset % 64, 0u);
    EXPECT_EQ(bytes[h.data_offset - 1], '\n');
    EXPECT_EQ(h.shape, a.shape);
  }
}

TEST(Npy, FileRoundTripIsBitIdentical) {
  const fs::path dir = temp_dir("roundtrip");
  Tensor t = oracle::random_matrix(33, 7, 5);
  t(0, 0) = -0.0f;
  t(1, 1) = std::numeric_limits<float>::denorm_min();
  write_tensor(dir / "t.npy", t);
  const Tensor back = read_tensor(dir / "t.npy");
  ASSERT_EQ(back.rows(), t.rows());
  ASSERT_EQ(back.cols(), t.cols());
  EXPECT_EQ(std::memcmp(back.data(), t.data(), sizeof(float) * t.size()), 0);
}

TEST(Npy, RejectsOtherDtype) {
  expect_format_error(header_with("{'descr': '<f8', 'fortran_order': False, 'shape': (1, 2), }"), "descr");
  expect_format_error(header_with("{'descr': '>f4', 'fortran_order': False, 'shape': (1, 2), }"), "descr");
}

TEST(Npy, RejectsFortranOrder) {
  expect_format_error(header_with("{'descr': '<f4', 'fortran_order': True, 'shape': (1, 2), }"), "fortran_order");
}

TEST(Npy, RejectsOtherVersion) {
  expect_format_error(header_with("{'descr': '<f4', 'fortran_order': False, 'shape': (1, 2), }", 2), "version");
}

TEST(Npy, RejectsBadMagic) {
  std::string bytes = numpy_reference();
  bytes[1] = 'X';
  expect_format_error(bytes, "magic");
}

TEST(Npy, RejectsTruncatedPayload) {
  const std::string bytes = numpy_reference();
  expect_format_error(bytes.substr(0, bytes.size() - 1), "data");
}

TEST(Npy, RejectsMissingShape) {
  expect_format_error(header_with("{'descr': '<f4', 'fortran_order': False, }"), "shape");
}

TEST(Npy, TensorConversionRequiresRankTwo) {
  NpyArray a{{2, 2, 2}, std::vector<float>(8, 1.0f)};
  EXPECT_THROW(to_tensor(a), FormatError);
}

TEST(Npy, MissingFileIsIoError) {
  EXPECT_THROW(read_npy(fs::temp_directory_path() / "clusterattn_does_not_exist.npy"), IoError);
}

TEST(Npy, TruncatedFileNamesTheFile) {
  const fs::path dir = temp_dir("truncated");
  const std::string bytes = numpy_reference();
  std::ofstream(dir / "cut.npy", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  try {
    read_npy(dir / "cut.npy");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cut.npy"), std::string::npos) << e.what();
  }
}
