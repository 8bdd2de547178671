#include "spvit/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

namespace spvit {

namespace {

static_assert(std::numeric_limits<float>::is_iec559);

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, const std::string& origin)
      : bytes_(bytes), end_(end), origin_(origin) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) {
      throw CheckpointError(CheckpointError::Reason::truncated,
                            origin_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
  Writer w;
  w.bytes(checkpoint::kMagic, 4);
  w.u32(checkpoint::kVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(checkpoint::kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    w.u64(offset);
    offset += static_cast<std::uint64_t>(t.numel()) * 4;
  }
  const std::size_t payload_start = w.buffer().size();
  for (const auto& [name, t] : tensors) {
    for (float f : t.data()) w.f32(f);
  }
  auto& buf = w.buffer();
  w.u32(crc32_of(buf.data() + payload_start, buf.size() - payload_start));
  return std::move(buf);
}

NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  using R = CheckpointError::Reason;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), checkpoint::kMagic, 4) != 0) {
    throw CheckpointError(R::magic, origin + ": bad magic (not an SPVT checkpoint)");
  }
  if (bytes.size() < 16) throw CheckpointError(R::truncated, origin + ": truncated header");
  const std::size_t body_end = bytes.size() - 4;  // CRC trailer
  Reader r(bytes, body_end, origin);
  r.str(4, "magic");
  const auto version = r.u32("version");
  if (version != checkpoint::kVersion) {
    throw CheckpointError(R::version, origin + ": unsupported format version " + std::to_string(version));
  }
  const auto count = r.u32("tensor count");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, size;
  };
  std::vector<Entry> entries;
  std::set<std::string> names;
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = r.u32("name length");
    e.name = r.str(len, "tensor name");
    if (!names.insert(e.name).second) throw CheckpointError(R::directory, origin + ": duplicate tensor '" + e.name + "'");
    const auto dtype = r.u32("dtype");
    if (dtype != checkpoint::kDtypeF32) {
      throw CheckpointError(R::directory, origin + ": tensor '" + e.name + "' has unsupported dtype code " +
                                              std::to_string(dtype));
    }
    const auto rank = r.u32("rank");
    if (rank == 0) throw CheckpointError(R::directory, origin + ": tensor '" + e.name + "' has rank 0");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto ext = r.u64("extent");
      if (ext == 0 || ext > (std::uint64_t{1} << 40) || n > (std::uint64_t{1} << 40) / ext) {
        throw CheckpointError(R::directory, origin + ": tensor '" + e.name + "' has an invalid extent");
      }
      n *= ext;
      e.shape.push_back(static_cast<std::size_t>(ext));
    }
    e.offset = r.u64("offset");
    e.size = n * 4;
    if (e.offset != expected_offset) {
      throw CheckpointError(R::directory, origin + ": tensor '" + e.name + "' offset " + std::to_string(e.offset) +
                                              " breaks the contiguous layout (expected " +
                                              std::to_string(expected_offset) + ")");
    }
    expected_offset += e.size;
    entries.push_back(std::move(e));
  }
  const std::size_t payload_start = r.pos();
  if (body_end - payload_start < expected_offset) {
    throw CheckpointError(R::truncated, origin + ": payload truncated (need " + std::to_string(expected_offset) +
                                            " bytes, have " + std::to_string(body_end - payload_start) + ")");
  }
  if (body_end - payload_start != expected_offset) {
    throw CheckpointError(R::directory, origin + ": " + std::to_string(body_end - payload_start - expected_offset) +
                                            " unexpected bytes after the payload");
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body_end + i]) << (8 * i);
  const auto actual = crc32_of(bytes.data() + payload_start, expected_offset);
  if (stored != actual) {
    throw CheckpointError(R::crc, origin + ": CRC mismatch (stored " + std::to_string(stored) + ", computed " +
                                      std::to_string(actual) + ")");
  }

  NamedTensors out;
  for (auto& e : entries) {
    std::vector<float> values(e.size / 4);
    const std::uint8_t* p = bytes.data() + payload_start + e.offset;
    for (std::size_t i = 0; i < values.size(); ++i, p += 4) {
      const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                              static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
      values[i] = std::bit_cast<float>(u);
    }
    out.emplace(e.name, Tensor<float>(std::move(e.shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const NamedTensors& tensors, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(tensors);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Reason::open, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

InventoryReport validate_inventory(const NamedTensors& tensors, const ModelSpec& spec) {
  InventoryReport rep;
  std::set<std::string> expected;
  for (const auto& s : inventory(spec)) {
    expected.insert(s.name);
    auto it = tensors.find(s.name);
    if (it == tensors.end()) {
      rep.missing.push_back(s.name);
    } else if (it->second.shape() != s.shape) {
      rep.mismatched.push_back(s.name + ": expected " + shape_str(s.shape) + ", found " +
                               shape_str(it->second.shape()));
    } else {
      rep.matched.push_back(s.name);
    }
  }
  for (const auto& [name, _] : tensors) {
    if (expected.count(name) == 0) rep.unexpected.push_back(name);
  }
  std::sort(rep.matched.begin(), rep.matched.end());
  std::sort(rep.missing.begin(), rep.missing.end());
  std::sort(rep.mismatched.begin(), rep.mismatched.end());
  return rep;
}

}  // namespace spvit
