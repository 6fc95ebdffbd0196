#include "wid/container.hpp"

#include "wid/error.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace wid {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void read_f32(std::span<const std::uint8_t> bytes, std::size_t& offset, std::span<float> out) {
  if (offset + 4 * out.size() > bytes.size()) fail(ErrorKind::TruncatedFile, "tensor data");
  for (float& f : out) {
    f = std::bit_cast<float>(get_u32(bytes, offset));
    offset += 4;
  }
}

std::vector<std::uint8_t> encode_container(std::string_view magic, const nlohmann::json& header,
                                           std::span<const std::uint8_t> payload) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32_of(out));
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           const std::function<std::size_t(const nlohmann::json&)>& payload_size) {
  const std::size_t mlen = magic.size();
  if (bytes.size() < mlen) fail(ErrorKind::TruncatedFile, "shorter than magic");
  if (std::memcmp(bytes.data(), magic.data(), mlen) != 0)
    fail(ErrorKind::FormatVersionMismatch, "expected magic " + std::string(magic));
  if (bytes.size() < mlen + 4) fail(ErrorKind::TruncatedFile, "missing header length");
  const std::uint32_t hlen = get_u32(bytes, mlen);
  const std::size_t hstart = mlen + 4;
  if (bytes.size() < hstart + hlen) fail(ErrorKind::TruncatedFile, "header cut short");

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(hstart),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(hstart + hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatVersionMismatch, std::string("unreadable header: ") + e.what());
  }
  const std::size_t psize = payload_size(c.header);
  const std::size_t expected = hstart + hlen + psize + 4;
  if (bytes.size() < expected) fail(ErrorKind::TruncatedFile, "payload cut short");
  if (bytes.size() > expected) fail(ErrorKind::FormatVersionMismatch, "trailing bytes after payload");
  const std::uint32_t stored = get_u32(bytes, expected - 4);
  if (crc32_of(bytes.first(expected - 4)) != stored)
    fail(ErrorKind::ChecksumMismatch, "CRC32 does not match contents");
  const auto* p = bytes.data() + hstart + hlen;
  c.payload.assign(p, p + psize);
  return c;
}

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::span<const std::uint8_t> payload) {
  const auto bytes = encode_container(magic, header, payload);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace wid
