#include "navhop/errors.hpp"

#include <array>
#include <utility>

namespace navhop {
namespace {

constexpr std::array<std::pair<Errc, std::string_view>, 24> kNames{{
    {Errc::kOk, "Ok"},
    {Errc::kBadMagic, "BadMagic"},
    {Errc::kDigestMismatch, "DigestMismatch"},
    {Errc::kVersionUnsupported, "VersionUnsupported"},
    {Errc::kMissingField, "MissingField"},
    {Errc::kMalformedManifest, "MalformedManifest"},
    {Errc::kManifestMismatch, "ManifestMismatch"},
    {Errc::kKeyInvalid, "KeyInvalid"},
    {Errc::kNotFound, "NotFound"},
    {Errc::kStoreUnavailable, "StoreUnavailable"},
    {Errc::kNodeUnreachable, "NodeUnreachable"},
    {Errc::kSchedulerUnreachable, "SchedulerUnreachable"},
    {Errc::kInvalidStatus, "InvalidStatus"},
    {Errc::kInvalidTransition, "InvalidTransition"},
    {Errc::kStaleSequence, "StaleSequence"},
    {Errc::kMissingBlob, "MissingBlob"},
    {Errc::kUnknownApp, "UnknownApp"},
    {Errc::kBusy, "Busy"},
    {Errc::kNoCheckpoint, "NoCheckpoint"},
    {Errc::kStageFailure, "StageFailure"},
    {Errc::kMalformedMessage, "MalformedMessage"},
    {Errc::kInvalidArgument, "InvalidArgument"},
    {Errc::kTimeout, "Timeout"},
    {Errc::kIoError, "IoError"},
}};

}  // namespace

std::string_view errc_name(Errc c) {
  for (const auto& [code, name] : kNames) {
    if (code == c) return name;
  }
  return "IoError";
}

Errc errc_from_name(std::string_view name) {
  for (const auto& [code, n] : kNames) {
    if (n == name) return code;
  }
  return Errc::kIoError;
}

}  // namespace navhop
