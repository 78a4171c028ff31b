#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "navhop/bytes.hpp"

namespace navhop {

// Checkpoint image container. A single binary blob holds everything needed to
// resume a task on another node: identity, the stage to execute next, the
// serialized variable state, and a trailing SHA-256 over all preceding bytes.
// Layout is fixed-width little-endian; see FORMAT.md.
inline constexpr char kCmiMagic[4] = {'N', 'C', 'M', 'I'};
inline constexpr std::uint32_t kCmiFormatVersion = 1;

struct CheckpointImage {
  std::string job_id;
  std::uint64_t sequence = 0;   // checkpoint counter, starts at 1
  std::uint32_t stage = 0;      // next stage to execute on resume
  std::uint64_t created_at = 0; // unix seconds
  Bytes payload;                // serialized task state

  bool operator==(const CheckpointImage&) const = default;
};

// Deterministic for identical inputs. sequence must be >= 1.
Bytes encode_cmi(const std::string& job_id, std::uint64_t sequence, std::uint32_t stage,
                 std::string_view payload, std::uint64_t created_at);

// Integrity is verified before any field is interpreted: the trailing digest
// is checked over the whole image first, so corruption or truncation anywhere,
// including the magic bytes, reports DigestMismatch. BadMagic is reserved for
// digest-consistent containers that are not checkpoint images, and
// VersionUnsupported for images from a newer format revision.
CheckpointImage decode_cmi(std::string_view blob);

// Restart manifest: the small, portable record that commits a checkpoint. It
// names the image blob and the resume entry point. UTF-8 key/value text with
// a fixed field order.
struct RestartManifest {
  std::string job_id;
  std::string cmi_blob_key;  // blob-store key "namespace/name"
  std::string app_name;
  std::uint32_t stage = 0;
  std::uint64_t sequence = 0;

  bool operator==(const RestartManifest&) const = default;
};

Bytes encode_manifest(const RestartManifest& m);
RestartManifest decode_manifest(std::string_view text);

}  // namespace navhop
