#include "spvit/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "spvit/errors.hpp"

namespace spvit {

namespace {

constexpr std::string_view kHeader = "timestamp,image_path,pv_kw,day_id,condition";

bool digits(std::string_view s, std::size_t pos, std::size_t n) {
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

bool is_date(std::string_view s) {
  return s.size() == 10 && digits(s, 0, 4) && s[4] == '-' && digits(s, 5, 2) && s[7] == '-' && digits(s, 8, 2);
}

bool is_timestamp(std::string_view s) {
  return s.size() == 16 && is_date(s.substr(0, 10)) && s[10] == 'T' && digits(s, 11, 2) && s[13] == ':' &&
         digits(s, 14, 2) && std::stoi(std::string(s.substr(11, 2))) < 24 &&
         std::stoi(std::string(s.substr(14, 2))) < 60;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string hhmm(int minute) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d:%02d", minute / 60, minute % 60);
  return buf;
}

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::sunny:
      return "sunny";
    case Condition::cloudy:
      return "cloudy";
    case Condition::unlabeled:
      return "unlabeled";
  }
  return "unlabeled";
}

Condition parse_condition(std::string_view s) {
  if (s == "sunny") return Condition::sunny;
  if (s == "cloudy") return Condition::cloudy;
  if (s == "unlabeled" || s.empty()) return Condition::unlabeled;
  throw DataError("unknown condition '" + std::string(s) + "' (expected sunny, cloudy or unlabeled)");
}

Manifest parse_manifest(std::string_view text, const std::string& origin, const std::filesystem::path& root,
                        const ManifestOptions& options) {
  Manifest m;
  m.root = root;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool seen_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!seen_header) {
      if (line != kHeader) throw ParseError(origin, line_no, "expected header '" + std::string(kHeader) + "'");
      seen_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != 5) {
      throw ParseError(origin, line_no, "expected 5 fields, found " + std::to_string(f.size()));
    }
    SampleRecord r;
    r.timestamp = f[0];
    if (!is_timestamp(f[0])) throw ParseError(origin, line_no, "bad timestamp '" + r.timestamp + "'");
    r.image_path = f[1];
    if (r.image_path.empty()) throw ParseError(origin, line_no, "empty image_path");
    const char* end = f[2].data() + f[2].size();
    const auto res = std::from_chars(f[2].data(), end, r.pv_kw);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(r.pv_kw)) {
      throw ParseError(origin, line_no, "bad pv_kw '" + std::string(f[2]) + "'");
    }
    if (r.pv_kw < 0.0) throw ParseError(origin, line_no, "negative pv_kw " + std::string(f[2]));
    if (r.pv_kw > options.capacity_kw) {
      throw ParseError(origin, line_no, "pv_kw " + std::string(f[2]) + " exceeds capacity " +
                                            format_double(options.capacity_kw));
    }
    r.day_id = f[3];
    if (!is_date(f[3])) throw ParseError(origin, line_no, "bad day_id '" + r.day_id + "'");
    if (r.timestamp.compare(0, 10, r.day_id) != 0) {
      throw ParseError(origin, line_no, "timestamp " + r.timestamp + " is not on day " + r.day_id);
    }
    try {
      r.condition = parse_condition(f[4]);
    } catch (const DataError& e) {
      throw ParseError(origin, line_no, e.what());
    }
    if (options.check_images && !std::filesystem::exists(root / r.image_path)) {
      throw ParseError(origin, line_no, "missing image file " + (root / r.image_path).string());
    }
    m.records.push_back(std::move(r));
  }
  if (!seen_header) throw ParseError(origin, 1, "empty file (no header)");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  auto m = parse_manifest(ss.str(), path.string(), path.parent_path(), options);
  m.role = path.stem().string();
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : manifest.records) {
    for (const auto* s : {&r.timestamp, &r.image_path, &r.day_id}) {
      if (s->find_first_of(",\n\r") != std::string::npos) {
        throw DataError("manifest field '" + *s + "' contains a delimiter");
      }
    }
    out += r.timestamp + ',' + r.image_path + ',' + format_double(r.pv_kw) + ',' + r.day_id + ',' +
           to_string(r.condition) + '\n';
  }
  return out;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  const auto text = format_manifest(manifest);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write to " + path.string() + " failed");
}

void preprocess_into(const Image& image, std::size_t size, std::span<float> out) {
  if (image.channels != 3 || image.width == 0 || image.height == 0) throw DecodeError("expected a non-empty RGB image");
  if (size == 0 || out.size() != 3 * size * size) throw DimensionError("preprocess output buffer has the wrong size");
  struct Tap {
    std::size_t i0, i1;
    double w;
  };
  auto taps = [size](std::size_t in) {
    std::vector<Tap> t(size);
    const double ratio = static_cast<double>(in) / static_cast<double>(size);
    for (std::size_t o = 0; o < size; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(src);
      t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(image.width);
  const auto ty = taps(image.height);
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - tx[x].w) * image.at(ty[y].i0, tx[x].i0, c) + tx[x].w * image.at(ty[y].i0, tx[x].i1, c);
        const double bot = (1.0 - tx[x].w) * image.at(ty[y].i1, tx[x].i0, c) + tx[x].w * image.at(ty[y].i1, tx[x].i1, c);
        const double v = (1.0 - ty[y].w) * top + ty[y].w * bot;
        out[c * plane + y * size + x] = static_cast<float>(std::clamp(v / 127.5 - 1.0, -1.0, 1.0));
      }
    }
  }
}

Tensor<float> preprocess(const Image& image, std::size_t size) {
  Tensor<float> t({3, size, size});
  preprocess_into(image, size, t.data());
  return t;
}

std::pair<Manifest, Manifest> split_shuffled(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1), got " + format_double(train_fraction));
  }
  if (manifest.empty()) throw DataError("cannot split an empty manifest");
  std::vector<std::size_t> order(manifest.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(manifest.size()) * train_fraction));
  Manifest train, val;
  for (auto* m : {&train, &val}) {
    m->root = manifest.root;
    m->resolution = manifest.resolution;
  }
  train.role = "train";
  val.role = "val";
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : val).records.push_back(manifest.records[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

Dataset load_dataset(const Manifest& manifest, std::size_t image_size) {
  if (image_size == 0) throw ConfigError("dataset image size must be positive");
  Dataset d;
  const std::size_t n = manifest.size();
  d.image_size = image_size;
  d.images.resize(n * d.sample_floats());
  std::vector<std::size_t> resolution(n, 0);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto img = read_png(manifest.image_file(manifest.records[i]));
      if (img.width != img.height) {
        errors[i] = manifest.records[i].image_path + ": image is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + ", expected square";
        continue;
      }
      resolution[i] = img.width;
      preprocess_into(img, image_size,
                      std::span<float>(d.images).subspan(i * d.sample_floats(), d.sample_floats()));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  std::size_t expected = manifest.resolution;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw DataError(errors[i]);
    if (expected == 0) expected = resolution[i];
    if (resolution[i] != expected) {
      throw DataError(manifest.records[i].image_path + ": resolution " + std::to_string(resolution[i]) +
                      " differs from the manifest's " + std::to_string(expected));
    }
  }
  for (const auto& r : manifest.records) {
    d.targets.push_back(static_cast<float>(r.pv_kw));
    d.conditions.push_back(r.condition);
    d.timestamps.push_back(r.timestamp);
    d.day_ids.push_back(r.day_id);
  }
  return d;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return out;
}

template <typename T>
Batch<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t per = data.sample_floats();
  Batch<T> b;
  b.images = Tensor<T>({indices.size(), 3, data.image_size, data.image_size});
  b.targets = Tensor<T>({indices.size(), 1});
  auto img = b.images.data();
  auto tgt = b.targets.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= data.size()) throw DataError("batch index " + std::to_string(i) + " out of range");
    std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(i * per), per,
                img.begin() + static_cast<std::ptrdiff_t>(k * per));
    tgt[k] = static_cast<T>(data.targets[i]);
  }
  b.indices.assign(indices.begin(), indices.end());
  return b;
}

template <typename T>
std::vector<Batch<T>> make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, int epoch) {
  std::vector<Batch<T>> out;
  for (const auto& idx : batch_indices(data.size(), batch_size, seed, epoch)) out.push_back(gather_batch<T>(data, idx));
  return out;
}

template Batch<float> gather_batch<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> gather_batch<double>(const Dataset&, std::span<const std::size_t>);
template std::vector<Batch<float>> make_batches<float>(const Dataset&, std::size_t, std::uint64_t, int);
template std::vector<Batch<double>> make_batches<double>(const Dataset&, std::size_t, std::uint64_t, int);

// ---- synthetic generator ----

void SynthConfig::validate() const {
  if (n_days == 0) throw ConfigError("synth n_days must be positive");
  if (samples_per_day == 0) throw ConfigError("synth samples_per_day must be positive");
  if (sunrise_minute < 0 || sunset_minute > 24 * 60 - 1 || sunset_minute <= sunrise_minute) {
    throw ConfigError("synth sunrise/sunset minutes must satisfy 0 <= sunrise < sunset < 1440");
  }
  if (samples_per_day > static_cast<std::size_t>(sunset_minute - sunrise_minute + 1)) {
    throw ConfigError("synth samples_per_day exceeds the number of daylight minutes");
  }
  if (!(p_max > 0.0)) throw ConfigError("synth p_max must be positive");
  if (image_size < 8) throw ConfigError("synth image_size must be at least 8");
  if (!(o_min >= 0.0 && o_min < 1.0)) throw ConfigError("synth o_min must lie in [0, 1)");
  if (!(cloud_fraction_min >= 0.0 && cloud_fraction_min <= cloud_fraction_max && cloud_fraction_max <= 1.0)) {
    throw ConfigError("synth cloud fraction range must satisfy 0 <= min <= max <= 1");
  }
  if (!cloud_fractions.empty() && cloud_fractions.size() != n_days) {
    throw ConfigError("synth cloud_fractions lists " + std::to_string(cloud_fractions.size()) + " values for " +
                      std::to_string(n_days) + " days");
  }
  if (!day_conditions.empty() && day_conditions.size() != n_days) {
    throw ConfigError("synth day_conditions lists " + std::to_string(day_conditions.size()) + " labels for " +
                      std::to_string(n_days) + " days");
  }
  for (Condition c : day_conditions) {
    if (c == Condition::unlabeled) throw ConfigError("synth day_conditions must be sunny or cloudy");
  }
  for (double cf : cloud_fractions) {
    if (!(cf >= 0.0 && cf <= 1.0)) throw ConfigError("synth cloud fractions must lie in [0, 1]");
  }
  if (!is_date(start_date)) throw ConfigError("synth start_date must be YYYY-MM-DD");
}

double SynthConfig::cloud_fraction(std::size_t day, Rng& rng) const {
  if (!cloud_fractions.empty()) return cloud_fractions.at(day);
  return rng.uniform(cloud_fraction_min, cloud_fraction_max);
}

double day_phase(const SynthConfig& cfg, int minute) {
  const double p = static_cast<double>(minute - cfg.sunrise_minute) /
                   static_cast<double>(cfg.sunset_minute - cfg.sunrise_minute);
  return std::clamp(p, 0.0, 1.0);
}

double clear_sky_kw(double p_max, double phase) {
  // exact zeros at both ends; sin(pi) is not exactly 0 in floating point
  if (phase <= 0.0 || phase >= 1.0) return 0.0;
  if (phase == 0.5) return p_max;
  return p_max * std::max(0.0, std::sin(std::numbers::pi * phase));
}

SunPosition sun_position(std::size_t image_size, double phase) {
  const double s = static_cast<double>(image_size);
  const double e = clear_sky_kw(1.0, phase);
  const double horizon = 0.85 * s, zenith = 0.18 * s;
  return {(0.12 + 0.76 * phase) * s, horizon - (horizon - zenith) * e, 0.07 * s, e};
}

DayScene make_day_scene(const SynthConfig& cfg, double cloud_fraction, std::uint64_t seed) {
  DayScene scene;
  scene.image_size = cfg.image_size;
  const double s = static_cast<double>(cfg.image_size);
  const auto count = static_cast<std::size_t>(std::lround(cloud_fraction * static_cast<double>(cfg.max_clouds)));
  Rng rng(seed);
  const double wind = rng.uniform() < 0.5 ? -1.0 : 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    CloudBlob b;
    b.cx = rng.uniform(0.0, s);
    b.cy = rng.uniform(0.0, s);
    b.rx = rng.uniform(0.07, 0.18) * s;
    b.ry = b.rx * rng.uniform(0.5, 0.9);
    b.vx = wind * rng.uniform(0.3, 1.2) * s;
    b.vy = rng.uniform(-0.2, 0.2) * s;
    scene.blobs.push_back(b);
  }
  return scene;
}

bool cloud_at(const DayScene& scene, double phase, double x, double y) {
  const double s = static_cast<double>(scene.image_size);
  auto wrap = [s](double d) {
    d = std::fmod(d, s);
    if (d < -0.5 * s) d += s;
    if (d >= 0.5 * s) d -= s;
    return d;
  };
  for (const auto& b : scene.blobs) {
    const double dx = wrap(x - (b.cx + b.vx * phase)) / b.rx;
    const double dy = wrap(y - (b.cy + b.vy * phase)) / b.ry;
    if (dx * dx + dy * dy <= 1.0) return true;
  }
  return false;
}

double sun_coverage(const DayScene& scene, double phase) {
  if (scene.blobs.empty()) return 0.0;
  const auto sun = sun_position(scene.image_size, phase);
  constexpr int kGrid = 9;
  int inside = 0, covered = 0;
  for (int i = 0; i < kGrid; ++i) {
    for (int j = 0; j < kGrid; ++j) {
      const double u = (2.0 * i + 1.0) / kGrid - 1.0;
      const double v = (2.0 * j + 1.0) / kGrid - 1.0;
      if (u * u + v * v > 1.0) continue;
      ++inside;
      covered += cloud_at(scene, phase, sun.x + u * sun.radius, sun.y + v * sun.radius) ? 1 : 0;
    }
  }
  return static_cast<double>(covered) / inside;
}

double occlusion_factor(const DayScene& scene, double phase, double o_min) {
  return 1.0 - (1.0 - o_min) * sun_coverage(scene, phase);
}

Image render_sky(const DayScene& scene, double phase) {
  const std::size_t n = scene.image_size;
  const double s = static_cast<double>(n);
  const auto sun = sun_position(n, phase);
  const double e = sun.elevation;
  const double sky_gain = 0.35 + 0.65 * e;
  const double sun_gain = 0.55 + 0.45 * e;
  const double cloud_gain = 0.45 + 0.55 * e;
  constexpr double top[3] = {60, 110, 190}, bottom[3] = {150, 190, 230};
  constexpr double sun_rgb[3] = {255, 250, 225}, cloud_rgb[3] = {218, 218, 224};
  Image img(n, n, 3);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc[3] = {0, 0, 0};
      // 2x2 supersampling
      for (double oy : {0.25, 0.75}) {
        for (double ox : {0.25, 0.75}) {
          const double px = static_cast<double>(x) + ox, py = static_cast<double>(y) + oy;
          double rgb[3];
          const double t = py / s;
          for (int c = 0; c < 3; ++c) rgb[c] = ((1 - t) * top[c] + t * bottom[c]) * sky_gain;
          const double d = std::hypot(px - sun.x, py - sun.y);
          if (d <= sun.radius) {
            for (int c = 0; c < 3; ++c) rgb[c] = sun_rgb[c] * sun_gain;
          } else if (d < 3.0 * sun.radius) {
            const double g = 1.0 - (d - sun.radius) / (2.0 * sun.radius);
            const double w = 0.6 * g * g;
            for (int c = 0; c < 3; ++c) rgb[c] = (1 - w) * rgb[c] + w * sun_rgb[c] * sun_gain;
          }
          if (cloud_at(scene, phase, px, py)) {
            for (int c = 0; c < 3; ++c) rgb[c] = cloud_rgb[c] * cloud_gain;
          }
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(acc[c] / 4, 0.0, 255.0)));
    }
  }
  return img;
}

std::vector<int> sample_minutes(const SynthConfig& cfg) {
  const int span = cfg.sunset_minute - cfg.sunrise_minute;
  if (cfg.samples_per_day == 1) return {cfg.sunrise_minute + span / 2};
  std::vector<int> out;
  const auto last = static_cast<double>(cfg.samples_per_day - 1);
  for (std::size_t k = 0; k < cfg.samples_per_day; ++k) {
    out.push_back(cfg.sunrise_minute + static_cast<int>(std::lround(static_cast<double>(k) * span / last)));
  }
  return out;
}

std::string date_plus_days(const std::string& ymd, int days) {
  using namespace std::chrono;
  if (!is_date(ymd)) throw ConfigError("bad date '" + ymd + "'");
  const year_month_day start{year{std::stoi(ymd.substr(0, 4))}, month{static_cast<unsigned>(std::stoi(ymd.substr(5, 2)))},
                             day{static_cast<unsigned>(std::stoi(ymd.substr(8, 2)))}};
  if (!start.ok()) throw ConfigError("invalid calendar date '" + ymd + "'");
  const year_month_day d{sys_days{start} + std::chrono::days{days}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

Manifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir, const std::string& name) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  Manifest m;
  m.root = out_dir;
  m.role = name;
  m.resolution = cfg.image_size;
  Rng cf_rng(derive_seed(cfg.seed, 0xC10D));
  const auto minutes = sample_minutes(cfg);
  for (std::size_t d = 0; d < cfg.n_days; ++d) {
    const double cf = cfg.cloud_fraction(d, cf_rng);
    // Mean occlusion over the sample grid decides the day's label.
    auto day_label = [&](const DayScene& sc) {
      double occ = 0.0;
      for (int minute : minutes) occ += occlusion_factor(sc, day_phase(cfg, minute), cfg.o_min);
      return occ / static_cast<double>(minutes.size()) > cfg.sunny_threshold ? Condition::sunny : Condition::cloudy;
    };
    auto scene = make_day_scene(cfg, cf, derive_seed(cfg.seed, 1000 + d));
    if (!cfg.day_conditions.empty()) {
      constexpr std::uint64_t kAttempts = 256;
      std::uint64_t attempt = 0;
      while (day_label(scene) != cfg.day_conditions[d]) {
        if (++attempt == kAttempts) {
          throw DataError("synth day " + std::to_string(d) + ": no scene at cloud fraction " + std::to_string(cf) +
                          " came out " + to_string(cfg.day_conditions[d]) + " in " + std::to_string(kAttempts) +
                          " draws");
        }
        scene = make_day_scene(cfg, cf, derive_seed(derive_seed(cfg.seed, 1000 + d), attempt));
      }
    }
    const auto day = date_plus_days(cfg.start_date, static_cast<int>(d));
    const auto day_dir = out_dir / "images" / day;
    std::filesystem::create_directories(day_dir, ec);
    if (ec) throw IoError("cannot create " + day_dir.string() + ": " + ec.message());

    std::vector<SampleRecord> recs(minutes.size());
    std::vector<std::string> errors(minutes.size());
    for (std::size_t k = 0; k < minutes.size(); ++k) {
      const double phase = day_phase(cfg, minutes[k]);
      const double o = occlusion_factor(scene, phase, cfg.o_min);
      const auto hm = hhmm(minutes[k]);
      recs[k].timestamp = day + "T" + hm;
      recs[k].image_path = "images/" + day + "/" + hm.substr(0, 2) + hm.substr(3, 2) + ".png";
      recs[k].pv_kw = clear_sky_kw(cfg.p_max, phase) * o;
      recs[k].day_id = day;
    }
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < minutes.size(); ++k) {
      try {
        write_png(render_sky(scene, day_phase(cfg, minutes[k])), out_dir / recs[k].image_path);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw IoError(e);
    }
    const auto cond = day_label(scene);
    for (auto& r : recs) {
      r.condition = cond;
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(m, out_dir / (name + ".csv"));
  return m;
}

}  // namespace spvit
