#include <doctest.h>

#include <cstring>
#include <fstream>

#include "semfuse/error.hpp"
#include "semfuse/safetensors.hpp"
#include "support.hpp"

using namespace semfuse;
namespace fs = std::filesystem;

namespace {

void write_raw(const fs::path& path, const std::string& header, const std::string& payload) {
  std::ofstream out(path, std::ios::binary);
  const std::uint64_t n = header.size();
  char len[8];
  for (int i = 0; i < 8; ++i) len[i] = static_cast<char>((n >> (8 * i)) & 0xff);
  out.write(len, 8);
  out << header << payload;
}

std::string half_payload() {
  // F16 {1, -2} followed by BF16 {1, 0.5}, little endian.
  const unsigned char bytes[] = {0x00, 0x3C, 0x00, 0xC0, 0x80, 0x3F, 0x00, 0x3F};
  return std::string(reinterpret_cast<const char*>(bytes), sizeof bytes);
}

const std::string kTinyHeader =
    R"({"a":{"dtype":"F16","shape":[2],"data_offsets":[0,4]},"b":{"dtype":"BF16","shape":[1,2],"data_offsets":[4,8]},"__metadata__":{"checkpoint":"tiny"}})";

}  // namespace

TEST_CASE("float32 tensors round trip with metadata") {
  const auto dir = test::scratch_dir("safetensors_rt");
  std::map<std::string, NamedTensor> tensors;
  tensors["x.weight"] = {{2, 3}, {1, 2, 3, 4, 5, 6}};
  tensors["x.bias"] = {{2}, {-0.5f, 0.25f}};
  write_safetensors(dir / "t.safetensors", tensors, {{"checkpoint", "unit"}});
  const TensorFile f = read_safetensors(dir / "t.safetensors");
  CHECK(f.metadata.at("checkpoint") == "unit");
  CHECK(f.tensors.at("x.weight").shape == std::vector<std::int64_t>{2, 3});
  CHECK(f.tensors.at("x.weight").values == tensors["x.weight"].values);
  CHECK(f.tensors.at("x.bias").values == tensors["x.bias"].values);
  CHECK(f.sha256.size() == 64);
}

TEST_CASE("half precision payloads are widened and the file is hashed") {
  const auto dir = test::scratch_dir("safetensors_half");
  write_raw(dir / "h.safetensors", kTinyHeader, half_payload());
  const TensorFile f = read_safetensors(dir / "h.safetensors");
  CHECK(f.tensors.at("a").values == std::vector<float>{1.0f, -2.0f});
  CHECK(f.tensors.at("b").values == std::vector<float>{1.0f, 0.5f});
  CHECK(f.tensors.at("b").shape == std::vector<std::int64_t>{1, 2});
  CHECK(f.metadata.at("checkpoint") == "tiny");
  // Digest of the same bytes computed with Python's hashlib.
  CHECK(f.sha256 == "08e8c953e6d673b72b8b3f2e05860b02752a826d88b7cb7622d9db3c512e98f7");
}

TEST_CASE("damaged files raise load errors") {
  const auto dir = test::scratch_dir("safetensors_bad");
  CHECK_THROWS_AS(read_safetensors(dir / "missing.safetensors"), LoadError);

  write_raw(dir / "truncated.safetensors", kTinyHeader, half_payload().substr(0, 5));
  CHECK_THROWS_AS(read_safetensors(dir / "truncated.safetensors"), LoadError);

  write_raw(dir / "json.safetensors", "{not json", "");
  CHECK_THROWS_AS(read_safetensors(dir / "json.safetensors"), LoadError);

  std::ofstream(dir / "short.safetensors") << "abc";
  CHECK_THROWS_AS(read_safetensors(dir / "short.safetensors"), LoadError);

  write_raw(dir / "dtype.safetensors", R"({"a":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})",
            std::string(8, '\0'));
  CHECK_THROWS_AS(read_safetensors(dir / "dtype.safetensors"), LoadError);

  write_raw(dir / "count.safetensors", R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})",
            std::string(8, '\0'));
  CHECK_THROWS_AS(read_safetensors(dir / "count.safetensors"), LoadError);
}
