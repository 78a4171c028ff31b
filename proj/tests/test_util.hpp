#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "navhop/errors.hpp"

namespace navhop::test {

// Runs f and reports which error code it threw; kOk means it did not throw.
template <typename F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::kOk;
}

inline std::string repo_path(const std::string& rel) {
  return std::string(NAVHOP_SOURCE_DIR) + "/" + rel;
}

inline std::string golden_path(const std::string& name) {
  return repo_path("tests/golden/" + name);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::kNotFound, "cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Golden comparison with an explicit regeneration switch. Regeneration is a
// deliberate local action; checked-in goldens are the contract.
inline bool regen_goldens() { return std::getenv("NAVHOP_REGEN_GOLDEN") != nullptr; }

// Fresh scratch directory per test, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / ("navhop-test-" + tag + "-XXXXXX");
    std::string tmpl = base.string();
    if (::mkdtemp(tmpl.data()) == nullptr) raise(Errc::kIoError, "mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string sub(const std::string& rel) const { return path_ + "/" + rel; }

 private:
  std::string path_;
};

}  // namespace navhop::test
