#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdm/signal.hpp"

namespace vdm {

inline constexpr double kSdrCap = 100.0;

/// Energy-ratio SDR, 10 log10(|ref|^2 / |ref - est|^2), capped at +100 dB.
/// Invariant to a common scaling of both signals, not to scaling `est` alone.
inline double sdr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw std::invalid_argument("sdr: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += ref[i] * ref[i];
    den += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  if (num <= 0.0) throw std::invalid_argument("sdr: zero reference");
  if (den <= 0.0) return kSdrCap;
  return std::min(kSdrCap, 10.0 * std::log10(num / den));
}

struct Cvdr {
  double ratio = 0.0;
  double db = 0.0;
  bool infinite = false;  // diffuse energy was zero
};

/// Coherent-to-diffuse energy ratio over all time-frequency bins.
inline Cvdr cvdr(const ComplexSpectrogram& z_coh, const ComplexSpectrogram& z_diff) {
  if (!z_coh.same_shape(z_diff)) throw std::invalid_argument("cvdr: shape mismatch");
  double ec = 0.0, ed = 0.0;
  for (const auto& v : z_coh.data) ec += std::norm(v);
  for (const auto& v : z_diff.data) ed += std::norm(v);
  if (ed <= 0.0) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(), true};
  return {ec / ed, 10.0 * std::log10(ec / ed), false};
}

inline constexpr double kSegmentEnergyFloor = 1e-12;

struct LevelCurve {
  std::vector<double> start_seconds;
  std::vector<double> db;  // positive: left louder
};

/// Per-segment 10 log10(E_left / E_right), both energies floored.
inline LevelCurve segmental_level_diff(std::span<const double> left, std::span<const double> right,
                                       std::size_t seg_len, std::size_t hop, double fs = 16000.0,
                                       double floor = kSegmentEnergyFloor) {
  if (left.size() != right.size()) throw std::invalid_argument("segmental_level_diff: length mismatch");
  if (seg_len == 0 || hop == 0) throw std::invalid_argument("segmental_level_diff: segment and hop must be positive");
  LevelCurve c;
  if (left.size() < seg_len) return c;
  for (std::size_t start = 0; start + seg_len <= left.size(); start += hop) {
    const double el = energy(left.subspan(start, seg_len)) + floor;
    const double er = energy(right.subspan(start, seg_len)) + floor;
    c.start_seconds.push_back(static_cast<double>(start) / fs);
    c.db.push_back(10.0 * std::log10(el / er));
  }
  return c;
}

struct ScatterSample {
  std::string id;
  double rt60 = 0.0;
  Cvdr cvdr;
  double sdr_db = 0.0;
};

/// One row per sample: cvdr_db,sdr_db,rt60 (plus id). No aggregation.
inline void scatter_report(std::span<const ScatterSample> samples, std::ostream& os) {
  if (samples.empty()) throw std::invalid_argument("scatter_report: no samples");
  os << "id,cvdr_db,sdr_db,rt60\n";
  os.precision(17);
  for (const auto& s : samples) os << s.id << ',' << s.cvdr.db << ',' << s.sdr_db << ',' << s.rt60 << '\n';
}

struct MetricRow {
  std::string id;
  double rt60 = 0.0;
  std::string metric;
  double value_db = 0.0;
  double cvdr_db = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.metric == metric) v.push_back(r.value_db);
    return v;
  }
  double mean(const std::string& metric) const {
    const auto v = values(metric);
    if (v.empty()) throw std::invalid_argument("metric report: no rows for " + metric);
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
  double median(const std::string& metric) const {
    auto v = values(metric);
    if (v.empty()) throw std::invalid_argument("metric report: no rows for " + metric);
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  }
  void write_csv(std::ostream& os) const {
    os << "id,rt60,metric,value_db,cvdr_db\n";
    os.precision(10);
    for (const auto& r : rows) os << r.id << ',' << r.rt60 << ',' << r.metric << ',' << r.value_db << ',' << r.cvdr_db << '\n';
  }
};

}  // namespace vdm
