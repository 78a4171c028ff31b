#include "doctest.h"
#include "navhop/cmi.hpp"
#include "navhop/sha256.hpp"
#include "navhop/value.hpp"
#include "test_util.hpp"

using namespace navhop;
using navhop::test::code_of;

namespace {

Bytes sample_payload() {
  ValueMap m;
  m["laps"] = Value(2);
  m["note"] = Value("halfway");
  m["trace"] = Value(FloatArray{0.5, -1.25});
  return serialize_value_map(m);
}

Bytes sample_image() { return encode_cmi("42", 3, 5, sample_payload(), 1700000000); }

// Re-signs a tampered body so only the targeted field is wrong.
Bytes resign(Bytes body_without_digest) {
  Bytes out = std::move(body_without_digest);
  out += sha256_bytes(out);
  return out;
}

}  // namespace

TEST_CASE("checkpoint image round-trips") {
  Bytes img = sample_image();
  CheckpointImage c = decode_cmi(img);
  CHECK(c.job_id == "42");
  CHECK(c.sequence == 3);
  CHECK(c.stage == 5);
  CHECK(c.created_at == 1700000000);
  CHECK(c.payload == sample_payload());
  // Deterministic: same inputs, same bytes.
  CHECK(sample_image() == img);
}

TEST_CASE("checkpoint image matches the committed golden bytes") {
  Bytes img = sample_image();
  std::string path = navhop::test::golden_path("ckpt_v1.cmi");
  if (navhop::test::regen_goldens()) navhop::test::write_file(path, img);
  CHECK(navhop::test::read_file(path) == img);
}

TEST_CASE("fixed overhead is 72 bytes plus the job id") {
  Bytes img = encode_cmi("j", 1, 0, "", 0);
  CHECK(img.size() == 72 + 1);
  Bytes img2 = encode_cmi("job-xyz", 1, 0, "pp", 0);
  CHECK(img2.size() == 72 + 7 + 2);
}

TEST_CASE("sequence zero cannot be encoded") {
  CHECK(code_of([] { encode_cmi("1", 0, 0, "", 0); }) == Errc::kInvalidArgument);
}

TEST_CASE("every single-bit flip anywhere reports a digest mismatch") {
  Bytes img = sample_image();
  for (std::size_t i = 0; i < img.size(); ++i) {
    for (int bit = 0; bit < 8; ++bit) {
      Bytes bad = img;
      bad[i] = static_cast<char>(bad[i] ^ (1 << bit));
      Errc got = code_of([&] { decode_cmi(bad); });
      if (got != Errc::kDigestMismatch) {
        CAPTURE(i);
        CAPTURE(bit);
        CHECK(got == Errc::kDigestMismatch);
      }
    }
  }
}

TEST_CASE("every truncation reports a digest mismatch") {
  Bytes img = sample_image();
  for (std::size_t len = 0; len < img.size(); ++len) {
    Errc got = code_of([&] { decode_cmi(img.substr(0, len)); });
    if (got != Errc::kDigestMismatch) {
      CAPTURE(len);
      CHECK(got == Errc::kDigestMismatch);
    }
  }
}

TEST_CASE("appended bytes report a digest mismatch") {
  Bytes img = sample_image();
  CHECK(code_of([&] { decode_cmi(img + "x"); }) == Errc::kDigestMismatch);
  CHECK(code_of([&] { decode_cmi(img + Bytes(32, '\0')); }) == Errc::kDigestMismatch);
}

TEST_CASE("bad magic is reported only when the digest holds") {
  Bytes img = sample_image();
  Bytes body = img.substr(0, img.size() - 32);
  body[0] = 'X';
  CHECK(code_of([&] { decode_cmi(resign(std::move(body))); }) == Errc::kBadMagic);
  // A self-consistent blob that is not an image at all.
  Bytes other(80, 'q');
  CHECK(code_of([&] { decode_cmi(resign(other.substr(0, 48))); }) == Errc::kBadMagic);
}

TEST_CASE("newer format versions are refused after the digest check") {
  Bytes img = sample_image();
  Bytes body = img.substr(0, img.size() - 32);
  body[4] = 2;  // version field, little-endian low byte
  CHECK(code_of([&] { decode_cmi(resign(std::move(body))); }) == Errc::kVersionUnsupported);
}

TEST_CASE("internal inconsistencies behind a valid digest read as corruption") {
  Bytes img = sample_image();
  Bytes body = img.substr(0, img.size() - 32);

  // Payload length field disagreeing with the actual size.
  Bytes wrong_len = body;
  std::size_t len_off = 4 + 4 + 4 + 2 + 8 + 4 + 8;  // after created_at, job id "42"
  wrong_len[len_off] = static_cast<char>(wrong_len[len_off] + 1);
  CHECK(code_of([&] { decode_cmi(resign(std::move(wrong_len))); }) == Errc::kDigestMismatch);

  // Sequence 0 embedded in an otherwise valid image.
  Bytes zero_seq = body;
  std::size_t seq_off = 4 + 4 + 4 + 2;
  for (int i = 0; i < 8; ++i) zero_seq[seq_off + i] = 0;
  CHECK(code_of([&] { decode_cmi(resign(std::move(zero_seq))); }) == Errc::kDigestMismatch);
}

TEST_CASE("manifest round-trip and fixed field order") {
  RestartManifest m;
  m.job_id = "7";
  m.cmi_blob_key = "job-7/cmi/00000004.cmi";
  m.app_name = "colocation";
  m.stage = 6;
  m.sequence = 4;
  Bytes text = encode_manifest(m);
  CHECK(text ==
        "job_id=7\n"
        "cmi_blob_key=job-7/cmi/00000004.cmi\n"
        "app_name=colocation\n"
        "stage=6\n"
        "sequence=4\n");
  CHECK(decode_manifest(text) == m);
  CHECK(encode_manifest(decode_manifest(text)) == text);

  std::string path = navhop::test::golden_path("manifest_v1.txt");
  if (navhop::test::regen_goldens()) navhop::test::write_file(path, text);
  CHECK(navhop::test::read_file(path) == text);
}

TEST_CASE("manifest decoder rejects structural damage") {
  Bytes good = encode_manifest({"7", "job-7/cmi/00000004.cmi", "colocation", 6, 4});
  CHECK(code_of([&] { decode_manifest(good.substr(0, good.size() - 1)); }) ==
        Errc::kMalformedManifest);  // lost trailing newline
  CHECK(code_of([&] { decode_manifest("job_id=7\nstage=1\n"); }) == Errc::kMalformedManifest);
  CHECK(code_of([&] { decode_manifest("who=me\n"); }) == Errc::kMalformedManifest);
  CHECK(code_of([&] { decode_manifest("job_id=7\njob_id=7\n"); }) == Errc::kMalformedManifest);
  CHECK(code_of([&] { decode_manifest("job_id=7\n"); }) == Errc::kMissingField);
  CHECK(code_of([&] {
          decode_manifest("job_id=7\ncmi_blob_key=k\napp_name=a\nstage=x\nsequence=1\n");
        }) == Errc::kMalformedManifest);
  CHECK(code_of([&] {
          decode_manifest("job_id=\ncmi_blob_key=k\napp_name=a\nstage=1\nsequence=1\n");
        }) == Errc::kMissingField);
}
