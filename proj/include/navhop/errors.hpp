#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace navhop {

// Error codes shared by the library, the wire protocol and the CLIs. The
// spellings returned by errc_name() are part of the protocol: they travel in
// the `error` field of failure responses and are matched by clients.
enum class Errc {
  kOk = 0,
  kBadMagic,
  kDigestMismatch,
  kVersionUnsupported,
  kMissingField,
  kMalformedManifest,
  kManifestMismatch,
  kKeyInvalid,
  kNotFound,
  kStoreUnavailable,
  kNodeUnreachable,
  kSchedulerUnreachable,
  kInvalidStatus,
  kInvalidTransition,
  kStaleSequence,
  kMissingBlob,
  kUnknownApp,
  kBusy,
  kNoCheckpoint,
  kStageFailure,
  kMalformedMessage,
  kInvalidArgument,
  kTimeout,
  kIoError,
};

std::string_view errc_name(Errc c);

// Returns kIoError for spellings this build does not know.
Errc errc_from_name(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace navhop
