#include "spvit/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "spvit/checkpoint.hpp"
#include "spvit/metrics.hpp"

namespace spvit {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same(const std::optional<double>& a, const std::optional<double>& b) {
  return a.has_value() == b.has_value() && (!a || same(*a, *b));
}

double parse_number(std::string_view s, const std::string& origin, std::size_t line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(origin, line, "bad number '" + std::string(s) + "'");
  }
  return v;
}

constexpr std::string_view kTableHeader = "learning_rate,batch_size,rmse_sunny,rmse_cloudy,rmse_overall,final_val_loss";

}  // namespace

bool SweepRow::operator==(const SweepRow& o) const {
  return same(learning_rate, o.learning_rate) && batch_size == o.batch_size && same(rmse_sunny, o.rmse_sunny) &&
         same(rmse_cloudy, o.rmse_cloudy) && same(rmse_overall, o.rmse_overall) &&
         same(final_val_loss, o.final_val_loss);
}

void SweepGrid::validate() const {
  if (learning_rates.empty() || batch_sizes.empty()) throw ConfigError("sweep grid needs learning rates and batch sizes");
  for (double lr : learning_rates) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("sweep learning rates must be positive");
  }
  for (auto b : batch_sizes) {
    if (b == 0) throw ConfigError("sweep batch sizes must be positive");
  }
  auto lrs = learning_rates;
  std::sort(lrs.begin(), lrs.end());
  auto bss = batch_sizes;
  std::sort(bss.begin(), bss.end());
  if (std::adjacent_find(lrs.begin(), lrs.end()) != lrs.end() || std::adjacent_find(bss.begin(), bss.end()) != bss.end()) {
    throw ConfigError("sweep grid lists a value twice");
  }
  base.validate();
}

std::string run_id(double learning_rate, std::size_t batch_size) {
  return num(learning_rate) + "_" + std::to_string(batch_size);
}

std::optional<std::size_t> select_best(const std::vector<SweepRow>& rows) {
  std::optional<std::size_t> best;
  auto key = [&](std::size_t i) {
    const auto& r = rows[i];
    return std::make_tuple(r.rmse_overall, r.final_val_loss, r.learning_rate, r.batch_size);
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].diverged()) continue;
    if (!best || key(i) < key(*best)) best = i;
  }
  return best;
}

SweepResult run_sweep(const SweepGrid& grid, const ModelSpec& spec, const NamedTensors* warm, const SweepData& data,
                      std::size_t parallelism, const std::filesystem::path& out_dir) {
  grid.validate();
  std::vector<SweepRow> rows;
  for (auto b : grid.batch_sizes) {
    for (double lr : grid.learning_rates) {
      SweepRow r;
      r.learning_rate = lr;
      r.batch_size = b;
      rows.push_back(r);
    }
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.batch_size, a.learning_rate) < std::tie(b.batch_size, b.learning_rate);
  });

  std::vector<std::string> failures(rows.size());
  auto run_one = [&](std::size_t i) {
    auto& row = rows[i];
    TrainConfig cfg = grid.base;
    cfg.learning_rate = row.learning_rate;
    cfg.batch_size = row.batch_size;
    const auto dir = out_dir.empty() ? out_dir : out_dir / "runs" / run_id(row.learning_rate, row.batch_size);
    if (!dir.empty()) std::filesystem::create_directories(dir);
    auto model = make_model<float>(spec, derive_seed(cfg.seed, 0x1417));
    if (warm) warm_start(*model, *warm, false);
    try {
      auto result = train(*model, data.train, data.val, cfg);
      const auto summary = rmse_by_condition(evaluate(*model, data.test, cfg.eval_clamp, cfg.batch_size));
      row.rmse_sunny = summary.rmse_sunny;
      row.rmse_cloudy = summary.rmse_cloudy;
      row.rmse_overall = summary.rmse_overall;
      row.final_val_loss = result.history.rows.back().val_mse;
      if (!dir.empty()) {
        result.history.write(dir / "loss_history.csv");
        write_metrics(summary, dir / "metrics.json");
        save_checkpoint(result.best, dir / "checkpoint.spvt");
      }
    } catch (const DivergenceError& e) {
      row.rmse_overall = std::numeric_limits<double>::quiet_NaN();
      row.final_val_loss = std::numeric_limits<double>::quiet_NaN();
      if (!dir.empty()) {
        std::ofstream(dir / "diverged.txt") << e.what() << "\n";
      }
    }
  };

  parallelism = std::clamp<std::size_t>(parallelism, 1, rows.size());
  if (parallelism == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < parallelism; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) {
          try {
            run_one(i);
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (const auto& f : failures) {
      if (!f.empty()) throw Error("sweep run failed: " + f);
    }
  }
  return {rows, select_best(rows)};
}

std::string format_results_table(const std::vector<SweepRow>& rows) {
  std::string out(kTableHeader);
  out += '\n';
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (const auto& r : rows) {
    out += num(r.learning_rate) + ',' + std::to_string(r.batch_size) + ',' + opt(r.rmse_sunny) + ',' +
           opt(r.rmse_cloudy) + ',' + num(r.rmse_overall) + ',' + num(r.final_val_loss) + '\n';
  }
  return out;
}

std::vector<SweepRow> parse_results_table(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != kTableHeader) throw ParseError(origin, n, "bad results-table header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw ParseError(origin, n, "expected 6 fields, found " + std::to_string(f.size()));
    SweepRow r;
    r.learning_rate = parse_number(f[0], origin, n);
    const auto b = parse_number(f[1], origin, n);
    if (!(b >= 1) || b != std::floor(b)) throw ParseError(origin, n, "bad batch size '" + f[1] + "'");
    r.batch_size = static_cast<std::size_t>(b);
    if (!f[2].empty()) r.rmse_sunny = parse_number(f[2], origin, n);
    if (!f[3].empty()) r.rmse_cloudy = parse_number(f[3], origin, n);
    r.rmse_overall = parse_number(f[4], origin, n);
    r.final_val_loss = parse_number(f[5], origin, n);
    rows.push_back(r);
  }
  return rows;
}

void write_results_table(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw ConfigError("results table needs at least one row");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << format_results_table(rows);
  if (!f) throw IoError("write to " + path.string() + " failed");
}

}  // namespace spvit
