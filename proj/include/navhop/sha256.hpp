#pragma once

#include <array>
#include <string>
#include <string_view>

namespace navhop {

using Sha256Digest = std::array<unsigned char, 32>;

Sha256Digest sha256(std::string_view data);
std::string sha256_hex(std::string_view data);

// Digest as a 32-byte string, the form stored inside checkpoint images.
std::string sha256_bytes(std::string_view data);

}  // namespace navhop
