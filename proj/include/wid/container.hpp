#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wid {

/// Binary artifact layout shared by weight and model files:
///   8-byte magic | u32 LE header length | UTF-8 JSON header | payload | u32 LE CRC32
/// The CRC covers every byte before the trailer.
struct Container {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_container(std::string_view magic, const nlohmann::json& header,
                                           std::span<const std::uint8_t> payload);

/// `payload_size` maps the parsed header to the payload byte count it declares, so a
/// short file is reported as TruncatedFile before the checksum is consulted.
Container decode_container(std::span<const std::uint8_t> bytes, std::string_view magic,
                           const std::function<std::size_t(const nlohmann::json&)>& payload_size);

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, std::span<const std::uint8_t> payload);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Little-endian float32 packing.
void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values);
void read_f32(std::span<const std::uint8_t> bytes, std::size_t& offset, std::span<float> out);

}  // namespace wid
