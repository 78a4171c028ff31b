#include "navhop/blob_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <filesystem>

#include "navhop/clock.hpp"
#include "navhop/errors.hpp"
#include "navhop/sha256.hpp"

namespace fs = std::filesystem;

namespace navhop {
namespace {

constexpr std::size_t kMaxKeyLength = 512;

bool valid_key_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' ||
         c == '_' || c == '-' || c == '/';
}

void validate_part(const std::string& part, const char* what) {
  if (part.empty()) raise(Errc::kKeyInvalid, std::string(what) + " is empty");
  for (char c : part) {
    if (!valid_key_char(c)) {
      raise(Errc::kKeyInvalid, std::string(what) + " contains invalid character");
    }
  }
  if (part.front() == '/' || part.back() == '/') {
    raise(Errc::kKeyInvalid, std::string(what) + " has leading or trailing '/'");
  }
  for (const auto& seg : {std::string("/../"), std::string("//")}) {
    if (("/" + part + "/").find(seg) != std::string::npos) {
      raise(Errc::kKeyInvalid, std::string(what) + " has empty or '..' segment");
    }
  }
}

std::uint64_t file_mtime_ms(const fs::path& p) {
  std::error_code ec;
  auto t = fs::last_write_time(p, ec);
  if (ec) return 0;
  auto sys = std::chrono::time_point_cast<std::chrono::milliseconds>(
      std::chrono::file_clock::to_sys(t));
  return static_cast<std::uint64_t>(sys.time_since_epoch().count());
}

}  // namespace

BlobKey BlobKey::parse(std::string_view full_key) {
  std::size_t slash = full_key.find('/');
  if (slash == std::string_view::npos || slash == 0 || slash + 1 >= full_key.size()) {
    raise(Errc::kKeyInvalid, "key must be namespace/name");
  }
  BlobKey k{std::string(full_key.substr(0, slash)), std::string(full_key.substr(slash + 1))};
  validate_key(k);
  return k;
}

void validate_key(const BlobKey& key) {
  validate_part(key.ns, "namespace");
  validate_part(key.name, "name");
  if (key.ns.find('/') != std::string::npos) {
    raise(Errc::kKeyInvalid, "namespace must not contain '/'");
  }
  if (key.ns.size() + 1 + key.name.size() > kMaxKeyLength) {
    raise(Errc::kKeyInvalid, "key longer than 512 characters");
  }
}

// ---------------------------------------------------------------------------
// MemoryStore

BlobMeta MemoryStore::put_atomic(const BlobKey& key, std::string_view content) {
  validate_key(key);
  StoreObserver obs;
  {
    std::lock_guard lk(mu_);
    obs = obs_;
  }
  if (obs) obs("write_mid", key);
  std::uint64_t now = wall_millis();
  {
    std::lock_guard lk(mu_);
    blobs_[key.full()] = Bytes(content);
    mtimes_[key.full()] = now;
  }
  if (obs) obs("renamed", key);
  return BlobMeta{key, content.size(), sha256_hex(content), now};
}

Bytes MemoryStore::get(const BlobKey& key) {
  validate_key(key);
  std::lock_guard lk(mu_);
  auto it = blobs_.find(key.full());
  if (it == blobs_.end()) raise(Errc::kNotFound, "no blob at " + key.full());
  return it->second;
}

bool MemoryStore::exists(const BlobKey& key) {
  validate_key(key);
  std::lock_guard lk(mu_);
  return blobs_.count(key.full()) > 0;
}

std::vector<BlobMeta> MemoryStore::list(const std::string& ns) {
  std::lock_guard lk(mu_);
  std::vector<BlobMeta> out;
  std::string prefix = ns + "/";
  for (const auto& [k, content] : blobs_) {
    if (k.rfind(prefix, 0) == 0) {
      BlobKey key{ns, k.substr(prefix.size())};
      out.push_back(BlobMeta{key, content.size(), sha256_hex(content), mtimes_[k]});
    }
  }
  // std::map iteration is already lexicographic by full key.
  return out;
}

void MemoryStore::remove(const BlobKey& key) {
  validate_key(key);
  std::lock_guard lk(mu_);
  if (blobs_.erase(key.full()) == 0) raise(Errc::kNotFound, "no blob at " + key.full());
  mtimes_.erase(key.full());
}

void MemoryStore::set_observer(StoreObserver obs) {
  std::lock_guard lk(mu_);
  obs_ = std::move(obs);
}

// ---------------------------------------------------------------------------
// DirStore

DirStore::DirStore(std::string root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec || !fs::is_directory(root_)) {
    raise(Errc::kStoreUnavailable, "cannot open store root " + root_);
  }
}

std::string DirStore::path_for(const BlobKey& key) const {
  return root_ + "/" + key.ns + "/" + key.name;
}

BlobMeta DirStore::put_atomic(const BlobKey& key, std::string_view content) {
  validate_key(key);
  StoreObserver obs;
  {
    std::lock_guard lk(obs_mu_);
    obs = obs_;
  }
  auto at = [&](std::string_view point) {
    if (obs) obs(point, key);
  };

  fs::path target = path_for(key);
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  if (ec) raise(Errc::kStoreUnavailable, "mkdir failed for " + key.full());

  // '#' cannot appear in a valid key, so temp files never collide with blobs.
  static std::atomic<std::uint64_t> counter{0};
  fs::path temp = target.parent_path() /
                  (target.filename().string() + "#tmp#" + std::to_string(::getpid()) + "#" +
                   std::to_string(counter.fetch_add(1)));

  int fd = ::open(temp.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0) raise(Errc::kStoreUnavailable, "open temp failed: " + std::string(strerror(errno)));
  at("open_temp");

  auto write_all = [&](std::string_view data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::write(fd, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        int err = errno;
        ::close(fd);
        ::unlink(temp.c_str());
        raise(Errc::kStoreUnavailable, "write failed: " + std::string(strerror(err)));
      }
      off += static_cast<std::size_t>(n);
    }
  };

  std::size_t half = content.size() / 2;
  write_all(content.substr(0, half));
  at("write_mid");
  write_all(content.substr(half));
  at("write_done");

  if (::fsync(fd) != 0) {
    ::close(fd);
    ::unlink(temp.c_str());
    raise(Errc::kStoreUnavailable, "fsync failed");
  }
  at("synced");
  ::close(fd);
  at("closed");

  if (::rename(temp.c_str(), target.c_str()) != 0) {
    int err = errno;
    ::unlink(temp.c_str());
    raise(Errc::kStoreUnavailable, "rename failed: " + std::string(strerror(err)));
  }
  at("renamed");

  int dirfd = ::open(target.parent_path().c_str(), O_RDONLY | O_DIRECTORY);
  if (dirfd >= 0) {
    ::fsync(dirfd);
    ::close(dirfd);
  }
  at("dir_synced");

  return BlobMeta{key, content.size(), sha256_hex(content), wall_millis()};
}

Bytes DirStore::get(const BlobKey& key) {
  validate_key(key);
  int fd = ::open(path_for(key).c_str(), O_RDONLY);
  if (fd < 0) {
    if (errno == ENOENT) raise(Errc::kNotFound, "no blob at " + key.full());
    raise(Errc::kStoreUnavailable, "open failed: " + std::string(strerror(errno)));
  }
  Bytes out;
  char buf[1 << 16];
  while (true) {
    ssize_t n = ::read(fd, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      raise(Errc::kStoreUnavailable, "read failed");
    }
    if (n == 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(fd);
  return out;
}

bool DirStore::exists(const BlobKey& key) {
  validate_key(key);
  return fs::exists(path_for(key));
}

std::vector<BlobMeta> DirStore::list(const std::string& ns) {
  std::vector<BlobMeta> out;
  fs::path dir = fs::path(root_) / ns;
  if (!fs::is_directory(dir)) return out;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
       ++it) {
    if (!it->is_regular_file()) continue;
    std::string name = fs::relative(it->path(), dir).generic_string();
    if (name.find('#') != std::string::npos) continue;  // in-flight temp
    BlobKey key{ns, name};
    Bytes content = get(key);
    out.push_back(BlobMeta{key, content.size(), sha256_hex(content), file_mtime_ms(it->path())});
  }
  std::sort(out.begin(), out.end(),
            [](const BlobMeta& a, const BlobMeta& b) { return a.key.name < b.key.name; });
  return out;
}

void DirStore::remove(const BlobKey& key) {
  validate_key(key);
  if (::unlink(path_for(key).c_str()) != 0) {
    if (errno == ENOENT) raise(Errc::kNotFound, "no blob at " + key.full());
    raise(Errc::kStoreUnavailable, "unlink failed");
  }
}

void DirStore::set_observer(StoreObserver obs) {
  std::lock_guard lk(obs_mu_);
  obs_ = std::move(obs);
}

}  // namespace navhop
