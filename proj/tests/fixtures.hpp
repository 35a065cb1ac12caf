#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "primed/data.hpp"

namespace fixtures {

/// Fresh directory under the system temp dir, removed at scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "primed_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    for (auto& c : name) {
      if (c == '/') c = '_';
    }
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream(path, std::ios::binary) << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// One binary attribute "g" with categories a/b and the given group/label columns.
inline primed::Dataset grouped(const std::vector<std::size_t>& groups, const std::vector<int>& labels) {
  primed::Dataset d;
  d.feature_names = {"f"};
  d.schema = primed::SensitiveSchema({{"g", {"a", "b"}}});
  for (std::size_t i = 0; i < groups.size(); ++i) {
    d.records.push_back({{static_cast<double>(i)}, {groups[i]}, labels[i]});
  }
  return d;
}

}  // namespace fixtures
