#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dasnet/tensor.hpp"

namespace dasnet::metrics {

inline constexpr int kThresholds = 256;
inline constexpr double kBeta2 = 0.3;
inline constexpr double kAlpha = 0.5;
inline constexpr double kMatlabEps = 2.220446049250313e-16;

namespace detail {

// Accepts {H,W}, {1,H,W} or {1,1,H,W} maps.
template <typename S>
void squeeze_hw(const Tensor<S>& t, int& h, int& w) {
  check(t.rank() >= 2, "metric maps must have rank >= 2");
  for (int i = 0; i + 2 < t.rank(); ++i)
    check(t.dim(i) == 1, "metric maps must be single-image, got " + t.shape_str());
  h = t.dim(t.rank() - 2);
  w = t.dim(t.rank() - 1);
}

template <typename S>
void check_pair(const Tensor<S>& p, const Tensor<S>& y, const char* op) {
  check(p.same_shape(y),
        std::string(op) + ": shape mismatch " + p.shape_str() + " vs " + y.shape_str());
  check(p.numel() > 0, std::string(op) + ": empty input");
}

inline const std::vector<double>& threshold_table() {
  static const std::vector<double> t = [] {
    std::vector<double> v(kThresholds);
    for (int k = 0; k < kThresholds; ++k) v[static_cast<std::size_t>(k)] = k / 255.0;
    return v;
  }();
  return t;
}

}  // namespace detail

struct FMeasureResult {
  double f_max = 0.0;
  double f_mean = 0.0;
  std::vector<double> precision;  // per threshold k/255, k = 0..255
  std::vector<double> recall;
  std::vector<double> fbeta;
  bool undefined_recall = false;  // ground truth had no positives
};

/// Precision/recall sweep over 256 uniform thresholds; Fbeta with beta^2 = 0.3.
template <typename S>
FMeasureResult f_measures(const Tensor<S>& p, const Tensor<S>& y) {
  detail::check_pair(p, y, "f_measures");
  FMeasureResult r;
  r.precision.assign(kThresholds, 0.0);
  r.recall.assign(kThresholds, 0.0);
  r.fbeta.assign(kThresholds, 0.0);

  std::int64_t npos = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    check(y[i] == S(0) || y[i] == S(1), "f_measures: ground truth must be binary");
    if (y[i] == S(1)) ++npos;
  }
  if (npos == 0) {
    r.undefined_recall = true;
    return r;
  }

  const auto& thr = detail::threshold_table();
  std::vector<std::int64_t> hist_all(kThresholds, 0), hist_pos(kThresholds, 0);
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    const double pv = static_cast<double>(p[i]);
    // Largest k with thr[k] <= pv; pv >= 0 guarantees k >= 0.
    const auto it = std::upper_bound(thr.begin(), thr.end(), pv);
    const int k = static_cast<int>(it - thr.begin()) - 1;
    check(k >= 0, "f_measures: prediction below 0");
    ++hist_all[static_cast<std::size_t>(k)];
    if (y[i] == S(1)) ++hist_pos[static_cast<std::size_t>(k)];
  }
  std::int64_t tp = 0, pp = 0;
  double fsum = 0.0;
  for (int k = kThresholds - 1; k >= 0; --k) {
    tp += hist_pos[static_cast<std::size_t>(k)];
    pp += hist_all[static_cast<std::size_t>(k)];
    const double prec = pp > 0 ? static_cast<double>(tp) / static_cast<double>(pp) : 0.0;
    const double rec = static_cast<double>(tp) / static_cast<double>(npos);
    const double den = kBeta2 * prec + rec;
    const double f = den > 0.0 ? (1.0 + kBeta2) * prec * rec / den : 0.0;
    r.precision[static_cast<std::size_t>(k)] = prec;
    r.recall[static_cast<std::size_t>(k)] = rec;
    r.fbeta[static_cast<std::size_t>(k)] = f;
    r.f_max = std::max(r.f_max, f);
    fsum += f;
  }
  r.f_mean = fsum / kThresholds;
  return r;
}

template <typename S>
double mae(const Tensor<S>& p, const Tensor<S>& y) {
  detail::check_pair(p, y, "mae");
  double acc = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i)
    acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(y[i]));
  return acc / static_cast<double>(p.numel());
}

// ---------------------------------------------------------------------------
// Structure measure (object-aware + region-aware similarity, alpha = 0.5)

namespace detail {

inline double object_score(const std::vector<double>& vals) {
  const std::size_t n = vals.size();
  if (n == 0) return 0.0;
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= static_cast<double>(n);
  double sd = 0.0;
  if (n > 1) {
    double acc = 0.0;
    for (double v : vals) acc += (v - mean) * (v - mean);
    sd = std::sqrt(acc / static_cast<double>(n - 1));
  }
  return 2.0 * mean / (mean * mean + 1.0 + sd + kMatlabEps);
}

template <typename S>
double s_object(const Tensor<S>& p, const Tensor<S>& y) {
  std::vector<double> fg, bg;
  std::int64_t npos = 0;
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    if (y[i] == S(1)) {
      fg.push_back(static_cast<double>(p[i]));
      ++npos;
    } else {
      bg.push_back(1.0 - static_cast<double>(p[i]));
    }
  }
  const double u = static_cast<double>(npos) / static_cast<double>(p.numel());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// SSIM-style similarity of one region (sample variance, N-1 normalization).
template <typename S>
double region_ssim(const Tensor<S>& p, const Tensor<S>& y, int h, int w, int y0, int y1, int x0,
                   int x1) {
  const std::int64_t n = static_cast<std::int64_t>(y1 - y0) * (x1 - x0);
  if (n <= 0) return 1.0;  // empty region carries zero weight
  double mx = 0.0, my = 0.0;
  for (int yy = y0; yy < y1; ++yy)
    for (int xx = x0; xx < x1; ++xx) {
      mx += static_cast<double>(p[static_cast<std::int64_t>(yy) * w + xx]);
      my += static_cast<double>(y[static_cast<std::int64_t>(yy) * w + xx]);
    }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0.0, vy = 0.0, vxy = 0.0;
  if (n > 1) {
    for (int yy = y0; yy < y1; ++yy)
      for (int xx = x0; xx < x1; ++xx) {
        const double dx = static_cast<double>(p[static_cast<std::int64_t>(yy) * w + xx]) - mx;
        const double dy = static_cast<double>(y[static_cast<std::int64_t>(yy) * w + xx]) - my;
        vx += dx * dx;
        vy += dy * dy;
        vxy += dx * dy;
      }
    vx /= static_cast<double>(n - 1);
    vy /= static_cast<double>(n - 1);
    vxy /= static_cast<double>(n - 1);
  }
  const double aleph = 4.0 * mx * my * vxy;
  const double beth = (mx * mx + my * my) * (vx + vy);
  if (aleph != 0.0) return aleph / (beth + kMatlabEps);
  if (beth == 0.0) return 1.0;
  return 0.0;
}

template <typename S>
double s_region(const Tensor<S>& p, const Tensor<S>& y, int h, int w) {
  // Ground-truth centroid, 1-based with round-half-away-from-zero.
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const double v = static_cast<double>(y[static_cast<std::int64_t>(yy) * w + xx]);
      total += v;
      sx += v * (xx + 1);
      sy += v * (yy + 1);
    }
  int cx, cy;
  if (total == 0.0) {
    cx = static_cast<int>(std::round(w / 2.0));
    cy = static_cast<int>(std::round(h / 2.0));
  } else {
    cx = static_cast<int>(std::round(sx / total));
    cy = static_cast<int>(std::round(sy / total));
  }
  const double area = static_cast<double>(h) * w;
  const double w1 = (static_cast<double>(cx) * cy) / area;
  const double w2 = (static_cast<double>(w - cx) * cy) / area;
  const double w3 = (static_cast<double>(cx) * (h - cy)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double q1 = region_ssim(p, y, h, w, 0, cy, 0, cx);
  const double q2 = region_ssim(p, y, h, w, 0, cy, cx, w);
  const double q3 = region_ssim(p, y, h, w, cy, h, 0, cx);
  const double q4 = region_ssim(p, y, h, w, cy, h, cx, w);
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

}  // namespace detail

/// Structure measure S = 0.5 * S_object + 0.5 * S_region with the standard
/// degenerate cases for empty / full ground truth.
template <typename S>
double s_measure(const Tensor<S>& p, const Tensor<S>& y) {
  detail::check_pair(p, y, "s_measure");
  int h = 0, w = 0;
  detail::squeeze_hw(y, h, w);
  std::int64_t npos = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    check(y[i] == S(0) || y[i] == S(1), "s_measure: ground truth must be binary");
    if (y[i] == S(1)) ++npos;
  }
  double pmean = 0.0;
  for (std::int64_t i = 0; i < p.numel(); ++i) pmean += static_cast<double>(p[i]);
  pmean /= static_cast<double>(p.numel());
  if (npos == 0) return 1.0 - pmean;
  if (npos == y.numel()) return pmean;
  const double q = kAlpha * detail::s_object(p, y) + (1.0 - kAlpha) * detail::s_region(p, y, h, w);
  return std::max(q, 0.0);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

struct PerImageMetrics {
  std::string id;
  double f_max = 0.0, f_mean = 0.0, mae = 0.0, s_alpha = 0.0;
  bool degenerate_mask = false;
};

struct MetricReport {
  std::vector<PerImageMetrics> per_image;  // sorted by id
  double f_max = 0.0, f_mean = 0.0, mae = 0.0, s_alpha = 0.0;
  std::vector<double> mean_precision, mean_recall, mean_fbeta;
  std::vector<std::string> warnings;
};

/// Joins ground-truth masks and predictions by id and evaluates each pair.
/// Order is id-sorted; results are identical for any worker count.
template <typename S>
MetricReport evaluate_dataset(const std::vector<std::pair<std::string, Tensor<S>>>& masks,
                              const std::vector<std::pair<std::string, Tensor<S>>>& predictions,
                              int n_workers = 1) {
  check(n_workers >= 1, "evaluate_dataset: need at least one worker");
  std::map<std::string, const Tensor<S>*> pred_by_id;
  for (const auto& [id, t] : predictions) pred_by_id[id] = &t;

  std::vector<std::pair<std::string, const Tensor<S>*>> items;
  for (const auto& [id, m] : masks) items.emplace_back(id, &m);
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::string missing;
  for (const auto& [id, m] : items) {
    if (!pred_by_id.count(id)) missing += missing.empty() ? id : (", " + id);
  }
  check(missing.empty(), "evaluate_dataset: missing predictions for: " + missing);

  MetricReport report;
  report.per_image.resize(items.size());
  std::vector<FMeasureResult> curves(items.size());

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& [id, maskp] = items[i];
      const Tensor<S>& pred = *pred_by_id[id];
      PerImageMetrics m;
      m.id = id;
      FMeasureResult f = f_measures(pred, *maskp);
      m.f_max = f.f_max;
      m.f_mean = f.f_mean;
      m.mae = mae(pred, *maskp);
      m.s_alpha = f.undefined_recall ? 0.0 : s_measure(pred, *maskp);
      m.degenerate_mask = f.undefined_recall;
      report.per_image[i] = m;
      curves[i] = std::move(f);
    }
  };
  if (n_workers == 1 || items.size() < 2) {
    run(0, items.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (items.size() + n_workers - 1) / n_workers;
    for (int t = 0; t < n_workers; ++t) {
      const std::size_t b = std::min(items.size(), t * chunk);
      const std::size_t e = std::min(items.size(), b + chunk);
      if (b < e) pool.emplace_back(run, b, e);
    }
    for (auto& th : pool) th.join();
  }

  report.mean_precision.assign(kThresholds, 0.0);
  report.mean_recall.assign(kThresholds, 0.0);
  report.mean_fbeta.assign(kThresholds, 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& m = report.per_image[i];
    report.f_max += m.f_max;
    report.f_mean += m.f_mean;
    report.mae += m.mae;
    report.s_alpha += m.s_alpha;
    if (m.degenerate_mask)
      report.warnings.push_back(m.id + ": ground truth has no positives; metrics set to 0");
    if (!curves[i].precision.empty()) {
      for (int k = 0; k < kThresholds; ++k) {
        report.mean_precision[static_cast<std::size_t>(k)] +=
            curves[i].precision[static_cast<std::size_t>(k)];
        report.mean_recall[static_cast<std::size_t>(k)] +=
            curves[i].recall[static_cast<std::size_t>(k)];
        report.mean_fbeta[static_cast<std::size_t>(k)] +=
            curves[i].fbeta[static_cast<std::size_t>(k)];
      }
    }
  }
  const double inv = items.empty() ? 0.0 : 1.0 / static_cast<double>(items.size());
  report.f_max *= inv;
  report.f_mean *= inv;
  report.mae *= inv;
  report.s_alpha *= inv;
  for (int k = 0; k < kThresholds; ++k) {
    report.mean_precision[static_cast<std::size_t>(k)] *= inv;
    report.mean_recall[static_cast<std::size_t>(k)] *= inv;
    report.mean_fbeta[static_cast<std::size_t>(k)] *= inv;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report emission

inline void write_report_csv(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open " + path);
  out << "id,f_max,f_mean,mae,s_alpha\n";
  char buf[256];
  for (const auto& m : r.per_image) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", m.id.c_str(), m.f_max, m.f_mean,
                  m.mae, m.s_alpha);
    out << buf;
  }
}

inline void write_pr_csv(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open " + path);
  out << "threshold,precision,recall,fbeta\n";
  char buf[256];
  for (int k = 0; k < kThresholds; ++k) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f\n", k / 255.0,
                  r.mean_precision[static_cast<std::size_t>(k)],
                  r.mean_recall[static_cast<std::size_t>(k)],
                  r.mean_fbeta[static_cast<std::size_t>(k)]);
    out << buf;
  }
}

inline nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j;
  j["aggregate"] = {{"f_max", r.f_max},
                    {"f_mean", r.f_mean},
                    {"mae", r.mae},
                    {"s_alpha", r.s_alpha}};
  j["n_images"] = r.per_image.size();
  j["config"] = {{"beta2", kBeta2}, {"alpha", kAlpha}, {"n_thresholds", kThresholds}};
  j["warnings"] = r.warnings;
  return j;
}

inline void write_report_json(const MetricReport& r, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open " + path);
  out << report_json(r).dump(2) << "\n";
}

}  // namespace dasnet::metrics
