#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spvit/errors.hpp"
#include "spvit/inventory.hpp"
#include "spvit/models.hpp"

namespace spvit {

// Wire format, all integers little-endian:
//   "SPVT" | u32 version | u32 count
//   count x { u32 name_len | name bytes | u32 dtype | u32 rank | rank x u64 extent | u64 offset }
//   payload (f32 LE, row-major, directory order; offsets relative to payload start)
//   u32 CRC-32 (zlib polynomial) of the payload
namespace checkpoint {

inline constexpr char kMagic[4] = {'S', 'P', 'V', 'T'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

}  // namespace checkpoint

class CheckpointError : public LoadError {
 public:
  enum class Reason { open, magic, version, truncated, directory, crc };
  CheckpointError(Reason reason, const std::string& what) : LoadError(what), reason_(reason) {}
  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

/// Serializes tensors (sorted by name). Deterministic bytes for identical input.
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// Writes to a sibling temp file and renames it over `path`.
void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_checkpoint(const std::filesystem::path& path);

struct InventoryReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;
  std::vector<std::string> unexpected;
  std::vector<std::string> mismatched;  // "name: expected [..], found [..]"

  bool perfect() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
};

InventoryReport validate_inventory(const NamedTensors& tensors, const ModelSpec& spec);

}  // namespace spvit
