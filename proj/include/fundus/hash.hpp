#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fundus {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error(CorruptData) on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Hex string of `n` cryptographically random bytes.
std::string random_hex(std::size_t n);

/// "pbkdf2-sha256$<iterations>$<salt hex>$<key hex>" with a random salt.
std::string hash_password(std::string_view password);
/// Constant-time check against a hash_password() result; false for any
/// malformed stored value.
bool verify_password(std::string_view password, std::string_view stored);

} // namespace fundus
