#include "navhop/sha256.hpp"

#include <openssl/evp.h>

#include "navhop/bytes.hpp"
#include "navhop/errors.hpp"

namespace navhop {

Sha256Digest sha256(std::string_view data) {
  Sha256Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    raise(Errc::kIoError, "sha256 digest failed");
  }
  return out;
}

std::string sha256_bytes(std::string_view data) {
  Sha256Digest d = sha256(data);
  return std::string(reinterpret_cast<const char*>(d.data()), d.size());
}

std::string sha256_hex(std::string_view data) {
  return to_hex(sha256_bytes(data));
}

}  // namespace navhop
