#include "spvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spvit/tape.hpp"

namespace spvit {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write to " + path.string() + " failed");
}

int minute_of_day(const std::string& ts) {
  if (ts.size() < 16) return 0;
  return std::stoi(ts.substr(11, 2)) * 60 + std::stoi(ts.substr(14, 2));
}

}  // namespace

double rmse(std::span<const double> preds, std::span<const double> truths) {
  if (preds.empty()) throw MetricError("rmse of an empty sample");
  if (preds.size() != truths.size()) {
    throw MetricError("rmse: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(truths.size()) +
                      " truths");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += (preds[i] - truths[i]) * (preds[i] - truths[i]);
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

RmseSummary rmse_by_condition(const std::vector<EvalSample>& results) {
  std::vector<double> ps, ts, pc, tc, pa, ta;
  for (const auto& r : results) {
    if (r.condition == Condition::unlabeled) {
      throw LabelingError("sample " + r.timestamp + " has no sunny/cloudy label");
    }
    auto& p = r.condition == Condition::sunny ? ps : pc;
    auto& t = r.condition == Condition::sunny ? ts : tc;
    p.push_back(r.pred);
    t.push_back(r.truth);
    pa.push_back(r.pred);
    ta.push_back(r.truth);
  }
  RmseSummary s;
  s.rmse_overall = rmse(pa, ta);
  s.n_sunny = ps.size();
  s.n_cloudy = pc.size();
  if (!ps.empty()) s.rmse_sunny = rmse(ps, ts);
  if (!pc.empty()) s.rmse_cloudy = rmse(pc, tc);
  return s;
}

std::string metrics_json(const RmseSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? fixed(*v, 5) : std::string("null"); };
  std::string out = "{\n";
  out += "  \"rmse_sunny\": " + opt(s.rmse_sunny) + ",\n";
  out += "  \"rmse_cloudy\": " + opt(s.rmse_cloudy) + ",\n";
  out += "  \"rmse_overall\": " + fixed(s.rmse_overall, 5) + ",\n";
  out += "  \"n_sunny\": " + std::to_string(s.n_sunny) + ",\n";
  out += "  \"n_cloudy\": " + std::to_string(s.n_cloudy) + "\n}\n";
  return out;
}

void write_metrics(const RmseSummary& summary, const std::filesystem::path& path) {
  write_text(path, metrics_json(summary));
}

std::map<std::string, std::vector<SeriesPoint>> group_by_day(const std::vector<EvalSample>& results) {
  std::map<std::string, std::vector<SeriesPoint>> days;
  for (const auto& r : results) days[r.day_id].push_back({r.timestamp, r.truth, r.pred});
  for (auto& [day, pts] : days) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].timestamp == pts[i - 1].timestamp) {
        throw DataError("day " + day + " has duplicate timestamp " + pts[i].timestamp);
      }
    }
  }
  return days;
}

std::string series_csv(const std::vector<SeriesPoint>& points) {
  std::string out = "timestamp,truth_kw,pred_kw\n";
  for (const auto& p : points) out += p.timestamp + "," + fixed(p.truth, 6) + "," + fixed(p.pred, 6) + "\n";
  return out;
}

std::vector<SeriesPoint> parse_series_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  std::vector<SeriesPoint> out;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "timestamp,truth_kw,pred_kw") throw ParseError(origin, n, "bad series header");
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ParseError(origin, n, "expected 3 fields");
    SeriesPoint p;
    p.timestamp = line.substr(0, c1);
    try {
      std::size_t used = 0;
      const auto a = line.substr(c1 + 1, c2 - c1 - 1), b = line.substr(c2 + 1);
      p.truth = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument(a);
      p.pred = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument(b);
    } catch (const std::logic_error&) {
      throw ParseError(origin, n, "bad number");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string series_svg(const std::string& day, const std::vector<SeriesPoint>& points) {
  constexpr double W = 720, H = 400, left = 70, right = 20, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double vmax = 0.0;
  for (const auto& p : points) vmax = std::max({vmax, p.truth, p.pred});
  const double ymax = vmax > 0.0 ? vmax * 1.05 : 1.0;
  int t0 = 0, t1 = 1;
  if (!points.empty()) {
    t0 = minute_of_day(points.front().timestamp);
    t1 = minute_of_day(points.back().timestamp);
  }
  auto px = [&](const SeriesPoint& p) {
    if (t1 == t0) return left + pw / 2;
    return left + pw * (minute_of_day(p.timestamp) - t0) / static_cast<double>(t1 - t0);
  };
  auto py = [&](double v) { return top + ph * (1.0 - v / ymax); };
  auto polyline = [&](bool truth) {
    std::string pts;
    char buf[64];
    for (const auto& p : points) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", pts.empty() ? "" : " ", px(p), py(truth ? p.truth : p.pred));
      pts += buf;
    }
    return pts;
  };
  char buf[512];
  std::string s;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                W, H, W, H);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(W / 2, 0) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
       day + ": prediction and ground truth</text>\n";
  std::snprintf(buf, sizeof buf,
                "<g id=\"axes\" data-y-min=\"0\" data-y-max=\"%.6f\" stroke=\"black\">"
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/>"
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\"/></g>\n",
                ymax, left, top, left, top + ph, left, top + ph, left + pw, top + ph);
  s += buf;
  for (int i = 0; i <= 5; ++i) {
    const double v = ymax * i / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">%.1f</text>\n",
                  left - 6, py(v) + 4, v);
    s += buf;
  }
  if (!points.empty()) {
    for (const auto* p : {&points.front(), &points.back()}) {
      std::snprintf(buf, sizeof buf,
                    "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">%s</text>\n",
                    px(*p), top + ph + 16, p->timestamp.substr(11).c_str());
      s += buf;
    }
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">Time of day</text>\n",
                left + pw / 2, H - 16);
  s += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"18\" y=\"%.2f\" transform=\"rotate(-90 18 %.2f)\" text-anchor=\"middle\" "
                "font-family=\"sans-serif\" font-size=\"13\">PV power (kW)</text>\n",
                top + ph / 2, top + ph / 2);
  s += buf;
  s += "<polyline id=\"truth\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" + polyline(true) + "\"/>\n";
  s += "<polyline id=\"prediction\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"" + polyline(false) +
       "\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<g font-family=\"sans-serif\" font-size=\"12\"><text x=\"%.2f\" y=\"%.2f\" fill=\"#1f77b4\">truth (kW)</text>"
                "<text x=\"%.2f\" y=\"%.2f\" fill=\"#d62728\">prediction (kW)</text></g>\n",
                left + pw - 200, top + 14, left + pw - 100, top + 14);
  s += buf;
  s += "</svg>\n";
  return s;
}

std::vector<std::string> export_series(const std::vector<EvalSample>& results, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::string> days;
  for (const auto& [day, pts] : group_by_day(results)) {
    write_text(out_dir / (day + ".csv"), series_csv(pts));
    write_text(out_dir / (day + ".svg"), series_svg(day, pts));
    days.push_back(day);
  }
  return days;
}

template <typename T>
Image feature_map_grid(const ViTRegressor<T>& model, const Tensor<T>& image, std::size_t n_channels) {
  const auto& cfg = model.config();
  if (n_channels == 0 || n_channels > cfg.dim) {
    throw ConfigError("feature-map channel count " + std::to_string(n_channels) + " must lie in [1, " +
                      std::to_string(cfg.dim) + "]");
  }
  if (image.rank() != 3) throw DimensionError("feature maps expect one image [3 x S x S], got " + shape_str(image.shape()));
  NoGradScope<T> no_grad;
  Tensor<T> batch({1, image.dim(0), image.dim(1), image.dim(2)}, image.values());
  const auto emb = model.embed_patches(batch);  // 1 x P x dim
  const std::size_t g = cfg.grid();
  const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_channels))));
  const std::size_t rows = (n_channels + cols - 1) / cols;
  Image out(cols * g + (cols - 1), rows * g + (rows - 1), 1, 255);
  const auto e = emb.data();
  for (std::size_t ch = 0; ch < n_channels; ++ch) {
    double lo = e[ch], hi = e[ch];
    for (std::size_t p = 0; p < g * g; ++p) {
      lo = std::min<double>(lo, e[p * cfg.dim + ch]);
      hi = std::max<double>(hi, e[p * cfg.dim + ch]);
    }
    const std::size_t ox = (ch % cols) * (g + 1), oy = (ch / cols) * (g + 1);
    for (std::size_t p = 0; p < g * g; ++p) {
      const double v = e[p * cfg.dim + ch];
      const double u = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      out.at(oy + p / g, ox + p % g, 0) = static_cast<std::uint8_t>(std::lround(255.0 * u));
    }
  }
  // cells past the last channel stay black
  for (std::size_t ch = n_channels; ch < rows * cols; ++ch) {
    const std::size_t ox = (ch % cols) * (g + 1), oy = (ch / cols) * (g + 1);
    for (std::size_t p = 0; p < g * g; ++p) out.at(oy + p / g, ox + p % g, 0) = 0;
  }
  return out;
}

template Image feature_map_grid(const ViTRegressor<float>&, const Tensor<float>&, std::size_t);
template Image feature_map_grid(const ViTRegressor<double>&, const Tensor<double>&, std::size_t);

}  // namespace spvit
