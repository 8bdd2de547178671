#include "spvit/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>

namespace spvit {

namespace {

struct Entry {
  std::string section, key, value, where;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const Entry& e, const std::string& expected) {
  throw ConfigError(e.where + ": " + e.section + "." + e.key + " = '" + e.value + "' is not " + expected);
}

double as_double(const Entry& e, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !std::isfinite(v)) bad_value(e, "a number");
  return v;
}
double as_double(const Entry& e) { return as_double(e, e.value); }

std::uint64_t as_u64(const Entry& e, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) bad_value(e, "a non-negative integer");
  return v;
}
std::size_t as_size(const Entry& e) { return static_cast<std::size_t>(as_u64(e, e.value)); }
int as_int(const Entry& e) {
  int v = 0;
  const auto res = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
  if (res.ec != std::errc() || res.ptr != e.value.data() + e.value.size()) bad_value(e, "an integer");
  return v;
}

bool as_bool(const Entry& e) {
  if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
  if (e.value == "false" || e.value == "no" || e.value == "0") return false;
  bad_value(e, "a boolean (true/false)");
}

std::vector<double> as_doubles(const Entry& e) {
  std::vector<double> out;
  for (const auto& s : split_list(e.value)) out.push_back(as_double(e, s));
  if (out.empty()) bad_value(e, "a non-empty number list");
  return out;
}

std::vector<std::size_t> as_sizes(const Entry& e) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(e.value)) out.push_back(static_cast<std::size_t>(as_u64(e, s)));
  if (out.empty()) bad_value(e, "a non-empty integer list");
  return out;
}

FreezePolicy::Mode as_freeze_mode(const Entry& e) {
  try {
    return FreezePolicy::parse(e.value, {"*"}).mode;
  } catch (const ConfigError&) {
    bad_value(e, "one of none, head_only, custom");
  }
}

using Setter = std::function<void(RunConfig&, const Entry&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"model",
       {
           {"kind",
            [](RunConfig& c, const Entry& e) {
              if (e.value != "vit" && e.value != "sunset") bad_value(e, "vit or sunset");
              c.model_kind = e.value;
            }},
           {"preset", [](RunConfig&, const Entry&) {}},  // applied before everything else
           {"image_size",
            [](RunConfig& c, const Entry& e) { c.vit.image_size = c.sunset.image_size = as_size(e); }},
           {"output_scale",
            [](RunConfig& c, const Entry& e) { c.vit.output_scale = c.sunset.output_scale = as_double(e); }},
           {"patch_size", [](RunConfig& c, const Entry& e) { c.vit.patch_size = as_size(e); }},
           {"dim", [](RunConfig& c, const Entry& e) { c.vit.dim = as_size(e); }},
           {"depth", [](RunConfig& c, const Entry& e) { c.vit.depth = as_size(e); }},
           {"heads", [](RunConfig& c, const Entry& e) { c.vit.heads = as_size(e); }},
           {"mlp_dim", [](RunConfig& c, const Entry& e) { c.vit.mlp_dim = as_size(e); }},
           {"ln_eps", [](RunConfig& c, const Entry& e) { c.vit.ln_eps = as_double(e); }},
           {"conv1_filters", [](RunConfig& c, const Entry& e) { c.sunset.conv1.filters = as_size(e); }},
           {"conv1_kernel", [](RunConfig& c, const Entry& e) { c.sunset.conv1.kernel = as_size(e); }},
           {"conv1_pool", [](RunConfig& c, const Entry& e) { c.sunset.conv1.pool = as_size(e); }},
           {"conv2_filters", [](RunConfig& c, const Entry& e) { c.sunset.conv2.filters = as_size(e); }},
           {"conv2_kernel", [](RunConfig& c, const Entry& e) { c.sunset.conv2.kernel = as_size(e); }},
           {"conv2_pool", [](RunConfig& c, const Entry& e) { c.sunset.conv2.pool = as_size(e); }},
           {"fc1_width", [](RunConfig& c, const Entry& e) { c.sunset.fc1_width = as_size(e); }},
           {"bn_momentum", [](RunConfig& c, const Entry& e) { c.sunset.bn_momentum = as_double(e); }},
           {"bn_eps", [](RunConfig& c, const Entry& e) { c.sunset.bn_eps = as_double(e); }},
       }},
      {"train",
       {
           {"learning_rate", [](RunConfig& c, const Entry& e) { c.train.learning_rate = as_double(e); }},
           {"batch_size", [](RunConfig& c, const Entry& e) { c.train.batch_size = as_size(e); }},
           {"epochs", [](RunConfig& c, const Entry& e) { c.train.epochs = as_int(e); }},
           {"seed", [](RunConfig& c, const Entry& e) { c.train.seed = as_u64(e, e.value); }},
           {"freeze", [](RunConfig& c, const Entry& e) { c.train.freeze.mode = as_freeze_mode(e); }},
           {"freeze_patterns", [](RunConfig& c, const Entry& e) { c.train.freeze.patterns = split_list(e.value); }},
           {"eval_clamp", [](RunConfig& c, const Entry& e) { c.train.eval_clamp = as_bool(e); }},
           {"warm_start", [](RunConfig& c, const Entry& e) { c.warm_start = e.value; }},
           {"strict_warm_start", [](RunConfig& c, const Entry& e) { c.strict_warm_start = as_bool(e); }},
       }},
      {"data",
       {
           {"train_fraction", [](RunConfig& c, const Entry& e) { c.data.train_fraction = as_double(e); }},
           {"capacity_kw", [](RunConfig& c, const Entry& e) { c.data.capacity_kw = as_double(e); }},
           {"eval_batch_size", [](RunConfig& c, const Entry& e) { c.data.eval_batch_size = as_size(e); }},
       }},
      {"sweep",
       {
           {"learning_rates", [](RunConfig& c, const Entry& e) { c.sweep.learning_rates = as_doubles(e); }},
           {"batch_sizes", [](RunConfig& c, const Entry& e) { c.sweep.batch_sizes = as_sizes(e); }},
           {"freeze", [](RunConfig& c, const Entry& e) { c.sweep.freeze.mode = as_freeze_mode(e); }},
           {"freeze_patterns", [](RunConfig& c, const Entry& e) { c.sweep.freeze.patterns = split_list(e.value); }},
           {"epochs", [](RunConfig& c, const Entry& e) { c.sweep.epochs = as_int(e); }},
           {"parallelism", [](RunConfig& c, const Entry& e) { c.sweep.parallelism = as_size(e); }},
       }},
      {"synth",
       {
           {"train_days", [](RunConfig& c, const Entry& e) { c.synth.train_days = as_size(e); }},
           {"test_sunny_days", [](RunConfig& c, const Entry& e) { c.synth.test_sunny_days = as_size(e); }},
           {"test_cloudy_days", [](RunConfig& c, const Entry& e) { c.synth.test_cloudy_days = as_size(e); }},
           {"samples_per_day", [](RunConfig& c, const Entry& e) { c.synth.base.samples_per_day = as_size(e); }},
           {"p_max", [](RunConfig& c, const Entry& e) { c.synth.base.p_max = as_double(e); }},
           {"image_size", [](RunConfig& c, const Entry& e) { c.synth.base.image_size = as_size(e); }},
           {"cloud_fraction_min", [](RunConfig& c, const Entry& e) { c.synth.base.cloud_fraction_min = as_double(e); }},
           {"cloud_fraction_max", [](RunConfig& c, const Entry& e) { c.synth.base.cloud_fraction_max = as_double(e); }},
           {"cloudy_min", [](RunConfig& c, const Entry& e) { c.synth.cloudy_min = as_double(e); }},
           {"cloudy_max", [](RunConfig& c, const Entry& e) { c.synth.cloudy_max = as_double(e); }},
           {"max_clouds", [](RunConfig& c, const Entry& e) { c.synth.base.max_clouds = as_size(e); }},
           {"o_min", [](RunConfig& c, const Entry& e) { c.synth.base.o_min = as_double(e); }},
           {"sunny_threshold", [](RunConfig& c, const Entry& e) { c.synth.base.sunny_threshold = as_double(e); }},
           {"sunrise_minute", [](RunConfig& c, const Entry& e) { c.synth.base.sunrise_minute = as_int(e); }},
           {"sunset_minute", [](RunConfig& c, const Entry& e) { c.synth.base.sunset_minute = as_int(e); }},
           {"start_date", [](RunConfig& c, const Entry& e) { c.synth.base.start_date = e.value; }},
           {"seed", [](RunConfig& c, const Entry& e) { c.synth.base.seed = as_u64(e, e.value); }},
       }},
  };
  return table;
}

RunConfig apply(std::vector<Entry> entries) {
  RunConfig c;
  const auto& table = setters();
  for (const auto& e : entries) {
    auto sec = table.find(e.section);
    if (sec == table.end()) throw ConfigError(e.where + ": unknown section [" + e.section + "]");
    if (sec->second.count(e.key) == 0) {
      throw ConfigError(e.where + ": unknown key '" + e.key + "' in [" + e.section + "]");
    }
  }
  for (const auto& e : entries) {
    if (e.section == "model" && e.key == "preset") {
      try {
        c.vit = ViTConfig::preset(e.value);
      } catch (const ConfigError&) {
        bad_value(e, "a ViT preset (base or tiny-test)");
      }
    }
  }
  for (const auto& e : entries) table.at(e.section).at(e.key)(c, e);
  c.train.model = c.model_kind;
  return c;
}

std::vector<Entry> with_overrides(std::vector<Entry> entries, const std::vector<ConfigOverride>& overrides) {
  for (const auto& o : overrides) entries.push_back({o.section, o.key, o.value, "--set " + o.section + "." + o.key});
  return entries;
}

std::string num(double v) {
  char buf[64];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

template <typename V>
std::string join(const std::vector<V>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ", ";
    if constexpr (std::is_same_v<V, double>) {
      out += num(x);
    } else if constexpr (std::is_same_v<V, std::string>) {
      out += x;
    } else {
      out += std::to_string(x);
    }
  }
  return out;
}

}  // namespace

ConfigOverride ConfigOverride::parse(const std::string& text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + text + "' must look like section.key=value");
  }
  return {trim(text.substr(0, dot)), trim(text.substr(dot + 1, eq - dot - 1)), trim(text.substr(eq + 1))};
}

RunConfig parse_config(const std::string& text, const std::string& origin, const std::vector<ConfigOverride>& overrides) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto s = trim(raw);
    const std::string where = origin + ":" + std::to_string(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (setters().count(section) == 0) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    entries.push_back({section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), where});
  }
  auto c = apply(with_overrides(std::move(entries), overrides));
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<ConfigOverride>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string(), overrides);
}

RunConfig default_config(const std::vector<ConfigOverride>& overrides) { return parse_config("", "<defaults>", overrides); }

ExperimentData generate_experiment_data(const RunConfig& cfg, const std::filesystem::path& out) {
  const auto& s = cfg.synth;
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  ExperimentData result;
  SynthConfig pool = s.base;
  pool.n_days = s.train_days;
  pool.cloud_fractions.clear();
  const auto all = generate_synthetic(pool, out, "pool");
  std::tie(result.train, result.val) = split_shuffled(all, cfg.data.train_fraction, derive_seed(s.base.seed, 0x5E1));
  result.train.role = "train";
  result.val.role = "val";
  write_manifest(result.train, out / "train.csv");
  write_manifest(result.val, out / "val.csv");

  SynthConfig test = s.base;
  test.n_days = s.test_sunny_days + s.test_cloudy_days;
  test.start_date = date_plus_days(s.base.start_date, static_cast<int>(s.train_days));
  test.seed = derive_seed(s.base.seed, 0x7E57);
  Rng rng(derive_seed(s.base.seed, 0xC1D));
  test.cloud_fractions.assign(s.test_sunny_days, 0.0);
  for (std::size_t i = 0; i < s.test_cloudy_days; ++i) test.cloud_fractions.push_back(rng.uniform(s.cloudy_min, s.cloudy_max));
  test.day_conditions.assign(s.test_sunny_days, Condition::sunny);
  test.day_conditions.resize(test.n_days, Condition::cloudy);
  if (test.n_days > 0) {
    result.test = generate_synthetic(test, out, "test");
    std::string last;
    for (const auto& r : result.test.records) {
      if (r.day_id == last) continue;
      last = r.day_id;
      (r.condition == Condition::sunny ? result.sunny_days : result.cloudy_days) += 1;
    }
  }
  return result;
}

ModelSpec RunConfig::model_spec() const {
  if (model_kind == "vit") return vit;
  return sunset;
}

SweepGrid RunConfig::sweep_grid() const {
  SweepGrid g;
  g.learning_rates = sweep.learning_rates;
  g.batch_sizes = sweep.batch_sizes;
  g.base = train;
  g.base.freeze = sweep.freeze;
  if (sweep.epochs > 0) g.base.epochs = sweep.epochs;
  return g;
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  synth.base.seed = seed;
}

void RunConfig::validate() const {
  if (model_kind == "vit") {
    vit.validate();
  } else {
    sunset.validate();
  }
  train.validate();
  if (train.freeze.mode == FreezePolicy::Mode::custom && train.freeze.patterns.empty()) {
    throw ConfigError("[train] freeze = custom needs freeze_patterns");
  }
  if (sweep.freeze.mode == FreezePolicy::Mode::custom && sweep.freeze.patterns.empty()) {
    throw ConfigError("[sweep] freeze = custom needs freeze_patterns");
  }
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) throw ConfigError("[data] train_fraction must lie in (0, 1)");
  if (!(data.capacity_kw > 0.0)) throw ConfigError("[data] capacity_kw must be positive");
  if (sweep.epochs < 0) throw ConfigError("[sweep] epochs must be non-negative");
  sweep_grid().validate();
  if (!(synth.cloudy_min >= 0.0 && synth.cloudy_min <= synth.cloudy_max && synth.cloudy_max <= 1.0)) {
    throw ConfigError("[synth] cloudy range must satisfy 0 <= cloudy_min <= cloudy_max <= 1");
  }
  auto s = synth.base;
  s.n_days = std::max<std::size_t>(1, synth.train_days);
  s.validate();
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream o;
  const bool vit = c.model_kind == "vit";
  o << "[model]\n";
  o << "kind = " << c.model_kind << "\n";
  o << "image_size = " << (vit ? c.vit.image_size : c.sunset.image_size) << "\n";
  o << "output_scale = " << num(vit ? c.vit.output_scale : c.sunset.output_scale) << "\n";
  o << "patch_size = " << c.vit.patch_size << "\n";
  o << "dim = " << c.vit.dim << "\n";
  o << "depth = " << c.vit.depth << "\n";
  o << "heads = " << c.vit.heads << "\n";
  o << "mlp_dim = " << c.vit.mlp_dim << "\n";
  o << "ln_eps = " << num(c.vit.ln_eps) << "\n";
  o << "conv1_filters = " << c.sunset.conv1.filters << "\n";
  o << "conv1_kernel = " << c.sunset.conv1.kernel << "\n";
  o << "conv1_pool = " << c.sunset.conv1.pool << "\n";
  o << "conv2_filters = " << c.sunset.conv2.filters << "\n";
  o << "conv2_kernel = " << c.sunset.conv2.kernel << "\n";
  o << "conv2_pool = " << c.sunset.conv2.pool << "\n";
  o << "fc1_width = " << c.sunset.fc1_width << "\n";
  o << "bn_momentum = " << num(c.sunset.bn_momentum) << "\n";
  o << "bn_eps = " << num(c.sunset.bn_eps) << "\n";
  o << "\n[train]\n";
  o << "learning_rate = " << num(c.train.learning_rate) << "\n";
  o << "batch_size = " << c.train.batch_size << "\n";
  o << "epochs = " << c.train.epochs << "\n";
  o << "seed = " << c.train.seed << "\n";
  o << "freeze = " << c.train.freeze.name() << "\n";
  if (!c.train.freeze.patterns.empty()) o << "freeze_patterns = " << join(c.train.freeze.patterns) << "\n";
  o << "eval_clamp = " << (c.train.eval_clamp ? "true" : "false") << "\n";
  if (!c.warm_start.empty()) o << "warm_start = " << c.warm_start << "\n";
  o << "strict_warm_start = " << (c.strict_warm_start ? "true" : "false") << "\n";
  o << "\n[data]\n";
  o << "train_fraction = " << num(c.data.train_fraction) << "\n";
  o << "capacity_kw = " << num(c.data.capacity_kw) << "\n";
  o << "eval_batch_size = " << c.data.eval_batch_size << "\n";
  o << "\n[sweep]\n";
  o << "learning_rates = " << join(c.sweep.learning_rates) << "\n";
  o << "batch_sizes = " << join(c.sweep.batch_sizes) << "\n";
  o << "freeze = " << c.sweep.freeze.name() << "\n";
  if (!c.sweep.freeze.patterns.empty()) o << "freeze_patterns = " << join(c.sweep.freeze.patterns) << "\n";
  o << "epochs = " << c.sweep.epochs << "\n";
  o << "parallelism = " << c.sweep.parallelism << "\n";
  const auto& s = c.synth.base;
  o << "\n[synth]\n";
  o << "train_days = " << c.synth.train_days << "\n";
  o << "test_sunny_days = " << c.synth.test_sunny_days << "\n";
  o << "test_cloudy_days = " << c.synth.test_cloudy_days << "\n";
  o << "samples_per_day = " << s.samples_per_day << "\n";
  o << "p_max = " << num(s.p_max) << "\n";
  o << "image_size = " << s.image_size << "\n";
  o << "cloud_fraction_min = " << num(s.cloud_fraction_min) << "\n";
  o << "cloud_fraction_max = " << num(s.cloud_fraction_max) << "\n";
  o << "cloudy_min = " << num(c.synth.cloudy_min) << "\n";
  o << "cloudy_max = " << num(c.synth.cloudy_max) << "\n";
  o << "max_clouds = " << s.max_clouds << "\n";
  o << "o_min = " << num(s.o_min) << "\n";
  o << "sunny_threshold = " << num(s.sunny_threshold) << "\n";
  o << "sunrise_minute = " << s.sunrise_minute << "\n";
  o << "sunset_minute = " << s.sunset_minute << "\n";
  o << "start_date = " << s.start_date << "\n";
  o << "seed = " << s.seed << "\n";
  return o.str();
}

}  // namespace spvit
