#include "semfuse/safetensors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "semfuse/error.hpp"

namespace semfuse {

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

namespace {

using json = nlohmann::json;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ff;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      bits = sign | (exp << 23) | ((mant & 0x3ff) << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

float bf16_to_float(std::uint16_t b) { return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16); }

struct Entry {
  std::string name;
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

std::size_t dtype_size(const std::string& dtype, const std::string& name) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  throw LoadError("tensor '" + name + "' has unsupported dtype " + dtype);
}

}  // namespace

TensorFile read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open weights file " + path.string());
  std::error_code ec;
  const std::uint64_t file_size = std::filesystem::file_size(path, ec);
  if (ec) throw LoadError("cannot stat weights file " + path.string());

  Sha256 sha;
  std::uint64_t header_len = 0;
  if (file_size < 8 || !in.read(reinterpret_cast<char*>(&header_len), 8)) {
    throw LoadError("weights file too short: " + path.string());
  }
  sha.update(&header_len, 8);
  if (header_len > file_size - 8 || header_len > (std::uint64_t{1} << 28)) {
    throw LoadError("weights header length exceeds file size (truncated file?): " + path.string());
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw LoadError("cannot read weights header: " + path.string());
  }
  sha.update(header.data(), header.size());

  json doc;
  try {
    doc = json::parse(header);
  } catch (const json::exception& e) {
    throw LoadError("malformed weights header in " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw LoadError("weights header is not an object: " + path.string());

  TensorFile result;
  std::vector<Entry> entries;
  try {
    for (const auto& [name, value] : doc.items()) {
      if (name == "__metadata__") {
        for (const auto& [k, v] : value.items()) result.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
        continue;
      }
      Entry e;
      e.name = name;
      e.dtype = value.at("dtype").get<std::string>();
      e.shape = value.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = value.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[1] < offsets[0]) throw LoadError("bad data_offsets for " + name);
      e.begin = offsets[0];
      e.end = offsets[1];
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw LoadError("malformed tensor entry in " + path.string() + ": " + e.what());
  }

  const std::uint64_t data_size = file_size - 8 - header_len;
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.begin < b.begin; });

  std::uint64_t cursor = 0;
  std::vector<char> scratch;
  auto consume = [&](char* dst, std::uint64_t n) {
    if (!in.read(dst, static_cast<std::streamsize>(n))) throw LoadError("weights file truncated: " + path.string());
    sha.update(dst, n);
    cursor += n;
  };
  auto skip_to = [&](std::uint64_t offset) {
    if (offset < cursor) throw LoadError("overlapping tensors in " + path.string());
    scratch.resize(offset - cursor);
    consume(scratch.data(), scratch.size());
  };

  for (const auto& e : entries) {
    if (e.end > data_size) {
      throw LoadError("tensor '" + e.name + "' extends past end of file (truncated?): " + path.string());
    }
    const std::size_t elem = dtype_size(e.dtype, e.name);
    const std::int64_t count =
        std::accumulate(e.shape.begin(), e.shape.end(), std::int64_t{1}, std::multiplies<std::int64_t>());
    if (count < 0 || static_cast<std::uint64_t>(count) * elem != e.end - e.begin) {
      throw LoadError("tensor '" + e.name + "' byte size does not match its shape");
    }
    skip_to(e.begin);
    NamedTensor t;
    t.shape = e.shape;
    t.values.resize(static_cast<std::size_t>(count));
    if (elem == 4) {
      consume(reinterpret_cast<char*>(t.values.data()), e.end - e.begin);
    } else {
      scratch.resize(e.end - e.begin);
      consume(scratch.data(), scratch.size());
      const bool bf16 = e.dtype == "BF16";
      for (std::size_t i = 0; i < t.values.size(); ++i) {
        std::uint16_t raw;
        std::memcpy(&raw, scratch.data() + 2 * i, 2);
        t.values[i] = bf16 ? bf16_to_float(raw) : half_to_float(raw);
      }
    }
    result.tensors.emplace(e.name, std::move(t));
  }
  skip_to(data_size);
  result.sha256 = sha.hex();
  return result;
}

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, NamedTensor>& tensors,
                       const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot create " + path.string());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

}  // namespace semfuse
