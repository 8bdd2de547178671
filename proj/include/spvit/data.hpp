#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spvit/image_io.hpp"
#include "spvit/random.hpp"
#include "spvit/tensor.hpp"

namespace spvit {

enum class Condition { sunny, cloudy, unlabeled };

std::string to_string(Condition c);
/// Throws DataError on anything but sunny/cloudy/unlabeled.
Condition parse_condition(std::string_view s);

struct SampleRecord {
  std::string timestamp;   // YYYY-MM-DDTHH:MM
  std::string image_path;  // relative to the manifest's directory
  double pv_kw = 0.0;
  std::string day_id;      // YYYY-MM-DD
  Condition condition = Condition::unlabeled;

  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::string role;                 // train, val, test, or free-form
  std::size_t resolution = 0;       // source pixel size; 0 until known
  std::filesystem::path root;       // directory image paths resolve against

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::filesystem::path image_file(const SampleRecord& r) const { return root / r.image_path; }
};

struct ManifestOptions {
  double capacity_kw = 30.1;  // upper bound for pv_kw
  bool check_images = true;   // require referenced files to exist
};

/// Parses `timestamp,image_path,pv_kw,day_id,condition` rows. Errors carry the
/// file name and line number.
Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
Manifest parse_manifest(std::string_view text, const std::string& origin, const std::filesystem::path& root,
                        const ManifestOptions& options = {});
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);

/// Bilinear resize (half-pixel centers, edge clamp) to size x size, then
/// x / 127.5 - 1, written channel-major into out[3 * size * size].
void preprocess_into(const Image& image, std::size_t size, std::span<float> out);
Tensor<float> preprocess(const Image& image, std::size_t size);

/// Seeded Fisher-Yates over record indices; the first floor(N * fraction)
/// become train, the rest val.
std::pair<Manifest, Manifest> split_shuffled(const Manifest& manifest, double train_fraction, std::uint64_t seed);

/// Preprocessed images and labels held in memory.
struct Dataset {
  std::size_t image_size = 0;
  std::vector<float> images;  // N x 3 x S x S
  std::vector<float> targets;
  std::vector<Condition> conditions;
  std::vector<std::string> timestamps;
  std::vector<std::string> day_ids;

  std::size_t size() const { return targets.size(); }
  std::size_t sample_floats() const { return 3 * image_size * image_size; }
};

/// Decodes and preprocesses every image (in parallel). All source images must
/// be square and share one resolution.
Dataset load_dataset(const Manifest& manifest, std::size_t image_size);

template <typename T>
struct Batch {
  Tensor<T> images;   // n x 3 x S x S
  Tensor<T> targets;  // n x 1
  std::vector<std::size_t> indices;
};

/// Epoch-specific permutation chunked into ceil(n / batch_size) batches, last one partial.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch);
template <typename T>
Batch<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices);
template <typename T>
std::vector<Batch<T>> make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, int epoch);

// ---- synthetic sky / PV generator ----

struct SynthConfig {
  std::size_t n_days = 30;
  std::size_t samples_per_day = 61;  // 12-minute grid from sunrise to sunset
  double p_max = 30.1;
  /// Explicit per-day cloud fractions; when empty each day draws uniformly
  /// from [cloud_fraction_min, cloud_fraction_max].
  std::vector<double> cloud_fractions;
  /// Optional per-day labels: a day's scene is redrawn until its mean
  /// occlusion lands on the requested side of sunny_threshold.
  std::vector<Condition> day_conditions;
  double cloud_fraction_min = 0.0;
  double cloud_fraction_max = 1.0;
  std::size_t max_clouds = 14;
  std::size_t image_size = 64;
  double o_min = 0.2;
  double sunny_threshold = 0.9;
  int sunrise_minute = 6 * 60;
  int sunset_minute = 18 * 60;
  std::string start_date = "2024-06-01";
  std::uint64_t seed = 0;

  void validate() const;
  double cloud_fraction(std::size_t day, Rng& rng) const;
};

struct CloudBlob {
  double cx, cy;  // center at sunrise, pixels
  double rx, ry;  // semi-axes, pixels
  double vx, vy;  // drift over the whole day, pixels
};

struct DayScene {
  std::size_t image_size = 64;
  std::vector<CloudBlob> blobs;
};

struct SunPosition {
  double x, y, radius;
  double elevation;  // sin(pi * phase), 0 at the horizon
};

/// Time of day as a fraction of daylight: 0 at sunrise, 1 at sunset (clamped).
double day_phase(const SynthConfig& cfg, int minute);
double clear_sky_kw(double p_max, double phase);
SunPosition sun_position(std::size_t image_size, double phase);
DayScene make_day_scene(const SynthConfig& cfg, double cloud_fraction, std::uint64_t seed);
/// True if a cloud covers pixel-space point (x, y) at this phase (blobs wrap toroidally).
bool cloud_at(const DayScene& scene, double phase, double x, double y);
/// Fraction of the sun disk hidden by clouds, from a fixed sample lattice.
double sun_coverage(const DayScene& scene, double phase);
/// o(t) = 1 - (1 - o_min) * coverage.
double occlusion_factor(const DayScene& scene, double phase, double o_min);
Image render_sky(const DayScene& scene, double phase);
/// Sample minutes of one day, strictly increasing, sunrise and sunset included.
std::vector<int> sample_minutes(const SynthConfig& cfg);
std::string date_plus_days(const std::string& ymd, int days);

/// Renders cfg.n_days days into out_dir/images/<day>/<HHMM>.png and writes
/// out_dir/<name>.csv. Returns the manifest (root = out_dir).
Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                            const std::string& name = "synthetic");

}  // namespace spvit
