#include "navhop/cmi.hpp"

#include <array>

#include "navhop/errors.hpp"
#include "navhop/sha256.hpp"
#include "navhop/strings.hpp"

namespace navhop {
namespace {

// magic + version + job_len + sequence + stage + created_at + payload_len + digest
constexpr std::size_t kFixedOverhead = 4 + 4 + 4 + 8 + 4 + 8 + 8 + 32;
constexpr std::size_t kDigestSize = 32;

}  // namespace

Bytes encode_cmi(const std::string& job_id, std::uint64_t sequence, std::uint32_t stage,
                 std::string_view payload, std::uint64_t created_at) {
  if (sequence < 1) raise(Errc::kInvalidArgument, "cmi sequence must be >= 1");
  ByteWriter w;
  w.raw(std::string_view(kCmiMagic, 4));
  w.u32(kCmiFormatVersion);
  w.str32(job_id);
  w.u64(sequence);
  w.u32(stage);
  w.u64(created_at);
  w.u64(payload.size());
  w.raw(payload);
  Bytes body = w.take();
  body += sha256_bytes(body);
  return body;
}

CheckpointImage decode_cmi(std::string_view blob) {
  if (blob.size() < kFixedOverhead) {
    raise(Errc::kDigestMismatch, "image truncated: " + std::to_string(blob.size()) + " bytes");
  }
  std::string_view body = blob.substr(0, blob.size() - kDigestSize);
  std::string_view stored = blob.substr(blob.size() - kDigestSize);
  if (sha256_bytes(body) != stored) {
    raise(Errc::kDigestMismatch, "stored digest does not match image contents");
  }
  ByteReader r(body, Errc::kDigestMismatch);
  if (r.raw(4) != std::string_view(kCmiMagic, 4)) {
    raise(Errc::kBadMagic, "not a checkpoint image");
  }
  std::uint32_t version = r.u32();
  if (version != kCmiFormatVersion) {
    raise(Errc::kVersionUnsupported, "format version " + std::to_string(version));
  }
  CheckpointImage img;
  img.job_id = std::string(r.str32());
  img.sequence = r.u64();
  img.stage = r.u32();
  img.created_at = r.u64();
  std::uint64_t payload_length = r.u64();
  if (payload_length != r.remaining()) {
    raise(Errc::kDigestMismatch, "payload length field disagrees with image size");
  }
  img.payload = Bytes(r.raw(payload_length));
  if (img.sequence < 1) raise(Errc::kDigestMismatch, "sequence 0 in image");
  return img;
}

// Manifest field order is fixed; decode rejects unknown keys, duplicates and
// out-of-order fields so that encode(decode(x)) is byte-identical.
Bytes encode_manifest(const RestartManifest& m) {
  Bytes out;
  out += "job_id=" + m.job_id + "\n";
  out += "cmi_blob_key=" + m.cmi_blob_key + "\n";
  out += "app_name=" + m.app_name + "\n";
  out += "stage=" + std::to_string(m.stage) + "\n";
  out += "sequence=" + std::to_string(m.sequence) + "\n";
  return out;
}

RestartManifest decode_manifest(std::string_view text) {
  static const std::array<std::string_view, 5> kOrder = {"job_id", "cmi_blob_key", "app_name",
                                                         "stage", "sequence"};
  RestartManifest m;
  std::size_t field = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      raise(Errc::kMalformedManifest, "missing trailing newline");
    }
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) raise(Errc::kMalformedManifest, "empty line");
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) raise(Errc::kMalformedManifest, "line without '='");
    std::string_view key = line.substr(0, eq);
    std::string_view value = line.substr(eq + 1);
    if (field >= kOrder.size() || key != kOrder[field]) {
      bool known = false;
      for (auto k : kOrder) known = known || (k == key);
      if (!known) raise(Errc::kMalformedManifest, "unknown field '" + std::string(key) + "'");
      raise(Errc::kMalformedManifest, "field '" + std::string(key) + "' out of order or duplicated");
    }
    switch (field) {
      case 0:
        m.job_id = std::string(value);
        break;
      case 1:
        m.cmi_blob_key = std::string(value);
        break;
      case 2:
        m.app_name = std::string(value);
        break;
      case 3: {
        auto v = parse_u64(value);
        if (!v || *v > 0xffffffffull) raise(Errc::kMalformedManifest, "bad stage value");
        m.stage = static_cast<std::uint32_t>(*v);
        break;
      }
      case 4: {
        auto v = parse_u64(value);
        if (!v) raise(Errc::kMalformedManifest, "bad sequence value");
        m.sequence = *v;
        break;
      }
    }
    ++field;
  }
  if (field < kOrder.size()) {
    raise(Errc::kMissingField, "manifest missing '" + std::string(kOrder[field]) + "'");
  }
  if (m.job_id.empty()) raise(Errc::kMissingField, "manifest job_id empty");
  if (m.cmi_blob_key.empty()) raise(Errc::kMissingField, "manifest cmi_blob_key empty");
  if (m.app_name.empty()) raise(Errc::kMissingField, "manifest app_name empty");
  return m;
}

}  // namespace navhop
