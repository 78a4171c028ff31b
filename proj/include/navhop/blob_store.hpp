#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "navhop/bytes.hpp"

namespace navhop {

// Shared storage namespace/name pair. Characters are restricted to
// [A-Za-z0-9._-/], combined length <= 512, and no path escapes.
struct BlobKey {
  std::string ns;
  std::string name;

  std::string full() const { return ns + "/" + name; }
  static BlobKey parse(std::string_view full_key);

  bool operator==(const BlobKey&) const = default;
};

void validate_key(const BlobKey& key);  // throws KeyInvalid

struct BlobMeta {
  BlobKey key;
  std::uint64_t length = 0;
  std::string digest_hex;
  std::uint64_t modified_at_ms = 0;
};

// Named points on the write path. Tests install an observer that aborts the
// process mid-write to model a crash; the node agent forwards selected points
// to the event stream.
using StoreObserver = std::function<void(std::string_view point, const BlobKey& key)>;

class BlobStore {
 public:
  virtual ~BlobStore() = default;

  // Readers observe either the previous blob or the new one in full, never a
  // partial write. Replaces any existing blob wholesale.
  virtual BlobMeta put_atomic(const BlobKey& key, std::string_view content) = 0;
  virtual Bytes get(const BlobKey& key) = 0;
  virtual bool exists(const BlobKey& key) = 0;
  virtual std::vector<BlobMeta> list(const std::string& ns) = 0;
  virtual void remove(const BlobKey& key) = 0;

  virtual void set_observer(StoreObserver obs) = 0;
};

// In-memory backend for unit tests.
class MemoryStore : public BlobStore {
 public:
  BlobMeta put_atomic(const BlobKey& key, std::string_view content) override;
  Bytes get(const BlobKey& key) override;
  bool exists(const BlobKey& key) override;
  std::vector<BlobMeta> list(const std::string& ns) override;
  void remove(const BlobKey& key) override;
  void set_observer(StoreObserver obs) override;

 private:
  std::mutex mu_;
  std::map<std::string, Bytes> blobs_;  // full key -> content
  std::map<std::string, std::uint64_t> mtimes_;
  StoreObserver obs_;
};

// Local-directory backend standing in for the shared volume. put_atomic writes
// a temp file in the destination directory, fsyncs it, and renames it over the
// target, so a crash at any point leaves the old blob or the new one.
//
// Observer points, in order: open_temp, write_mid (between the two halves of
// the content), write_done, synced, closed, renamed, dir_synced.
class DirStore : public BlobStore {
 public:
  explicit DirStore(std::string root);

  BlobMeta put_atomic(const BlobKey& key, std::string_view content) override;
  Bytes get(const BlobKey& key) override;
  bool exists(const BlobKey& key) override;
  std::vector<BlobMeta> list(const std::string& ns) override;
  void remove(const BlobKey& key) override;
  void set_observer(StoreObserver obs) override;

  const std::string& root() const { return root_; }

 private:
  std::string path_for(const BlobKey& key) const;

  std::string root_;
  StoreObserver obs_;
  std::mutex obs_mu_;
};

}  // namespace navhop
