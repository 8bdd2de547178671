#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "spvit/errors.hpp"

namespace spvit::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("spvit_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

Dataset synth_dataset(const SynthConfig& cfg, const std::filesystem::path& dir, const std::string& name) {
  return load_dataset(generate_synthetic(cfg, dir, name), cfg.image_size);
}

}  // namespace spvit::testing
