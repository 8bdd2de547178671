#pragma once

#include <filesystem>
#include <string>

#include "spvit/data.hpp"

namespace spvit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// Renders cfg into dir and loads it at the config's image size.
Dataset synth_dataset(const SynthConfig& cfg, const std::filesystem::path& dir, const std::string& name = "synthetic");

}  // namespace spvit::testing
