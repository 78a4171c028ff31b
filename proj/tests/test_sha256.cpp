#include "doctest.h"
#include "navhop/bytes.hpp"
#include "navhop/sha256.hpp"

using namespace navhop;

// Published reference digests for the algorithm.
TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 over a message spanning many blocks") {
  std::string m(1000000, 'a');
  CHECK(sha256_hex(m) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("byte-string digest matches the hex form") {
  std::string d = sha256_bytes("abc");
  REQUIRE(d.size() == 32);
  CHECK(to_hex(d) == sha256_hex("abc"));
}
