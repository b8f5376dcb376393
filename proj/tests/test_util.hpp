#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace svtest {

// Self-cleaning scratch directory under the system temp dir.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    const auto base = std::filesystem::temp_directory_path();
    for (int attempt = 0; attempt < 100; ++attempt) {
      char name[64];
      std::snprintf(name, sizeof(name), "svkit_test_%016llx",
                    static_cast<unsigned long long>(rng()));
      path_ = base / name;
      std::error_code ec;
      if (std::filesystem::create_directory(path_, ec)) return;
    }
    throw std::runtime_error("could not create temp directory");
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

// Byte-compares two directory trees (regular files, relative layout).
inline bool same_tree(const std::filesystem::path& a,
                      const std::filesystem::path& b) {
  std::vector<std::filesystem::path> rel_a, rel_b;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a))
    if (entry.is_regular_file())
      rel_a.push_back(std::filesystem::relative(entry.path(), a));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(b))
    if (entry.is_regular_file())
      rel_b.push_back(std::filesystem::relative(entry.path(), b));
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  if (rel_a != rel_b) return false;
  for (const auto& rel : rel_a)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

}  // namespace svtest
