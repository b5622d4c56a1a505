#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace npc {

/// Irregularly timestamped multivariate observations. Rows whose mask entry is
/// false were dropped: they are invisible to models but keep their values as
/// ground truth for interpolation scoring.
struct TimeSeries {
  std::vector<double> times;
  std::vector<std::vector<double>> values;  // N x D
  std::optional<int> label;
  std::vector<bool> mask;  // empty means every row observed

  std::size_t length() const { return times.size(); }
  std::size_t dims() const { return values.empty() ? 0 : values.front().size(); }
  bool observed(std::size_t i) const { return mask.empty() || mask[i]; }
  std::size_t observed_count() const {
    return mask.empty() ? times.size() : static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }

  /// Copy holding only observed rows.
  TimeSeries observed_only() const {
    TimeSeries s;
    s.label = label;
    for (std::size_t i = 0; i < times.size(); ++i)
      if (observed(i)) {
        s.times.push_back(times[i]);
        s.values.push_back(values[i]);
      }
    return s;
  }

  void validate() const {
    if (values.size() != times.size())
      throw std::invalid_argument("TimeSeries: " + std::to_string(values.size()) + " value rows for " +
                                  std::to_string(times.size()) + " times");
    if (!mask.empty() && mask.size() != times.size()) throw std::invalid_argument("TimeSeries: mask length mismatch");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1]))
        throw std::invalid_argument("TimeSeries: times must be strictly increasing (row " + std::to_string(i) + ")");
    for (const auto& r : values)
      if (r.size() != dims()) throw std::invalid_argument("TimeSeries: ragged value rows");
  }
};

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

/// Per-channel affine z-score map, fitted on observed training values.
struct Normalizer {
  std::vector<double> mean, stddev;

  static Normalizer fit(const std::vector<TimeSeries>& data) {
    Normalizer n;
    if (data.empty()) return n;
    const std::size_t D = data.front().dims();
    n.mean.assign(D, 0.0);
    n.stddev.assign(D, 0.0);
    double count = 0;
    for (const auto& s : data)
      for (std::size_t i = 0; i < s.length(); ++i)
        if (s.observed(i)) {
          for (std::size_t d = 0; d < D; ++d) n.mean[d] += s.values[i][d];
          count += 1;
        }
    for (auto& m : n.mean) m /= std::max(count, 1.0);
    for (const auto& s : data)
      for (std::size_t i = 0; i < s.length(); ++i)
        if (s.observed(i))
          for (std::size_t d = 0; d < D; ++d) n.stddev[d] += std::pow(s.values[i][d] - n.mean[d], 2);
    for (auto& v : n.stddev) {
      v = std::sqrt(v / std::max(count, 1.0));
      if (!(v > 1e-12)) v = 1.0;
    }
    return n;
  }

  bool empty() const { return mean.empty(); }

  TimeSeries apply(TimeSeries s) const {
    if (empty()) return s;
    for (auto& r : s.values)
      for (std::size_t d = 0; d < r.size(); ++d) r[d] = (r[d] - mean[d]) / stddev[d];
    return s;
  }
  std::vector<TimeSeries> apply(std::vector<TimeSeries> v) const {
    for (auto& s : v) s = apply(std::move(s));
    return v;
  }
  double invert(double v, std::size_t channel) const { return empty() ? v : v * stddev[channel] + mean[channel]; }
  std::vector<double> invert(std::vector<double> v) const {
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = invert(v[d], d);
    return v;
  }
};

namespace toy {
inline constexpr std::size_t kSteps = 100;
inline constexpr std::size_t kTrainPerClass = 50;
inline constexpr std::size_t kKinds = 20;
inline constexpr std::size_t kPerKind = 50;
inline constexpr std::size_t kDevStart = 60;  // idx1
inline constexpr std::size_t kDevEnd = 100;   // idx2 (exclusive)
inline constexpr double kSpan = 6.0;

inline double class0(double t) { return 7.0 + std::sin(t) + std::cos(t); }
inline double class1(double t) { return 2.0 * std::sin(t) + 2.0 * std::cos(t); }

/// Point the deviation parabolas pass through, and their axis of symmetry.
inline double x_pass() { return static_cast<double>(kDevStart) / kSteps * kSpan; }
inline double axis() { return (kDevStart + kDevEnd) / 2.0 * kSpan / kSteps; }

/// Deviation curve of kind i, anchored at (x_pass, y_pass).
inline double deviation(std::size_t kind, double y_pass, double t) {
  const double a = 0.3 * static_cast<double>(kind);
  const double k = y_pass - a * std::pow(x_pass() - axis(), 2);
  return a * std::pow(t - axis(), 2) + k;
}
}  // namespace toy

/// Two-class sine/cosine training set: 50 series per class, 100 steps on [0, 6],
/// shuffled. Values are raw; normalize with a Normalizer fitted on this split.
inline std::vector<TimeSeries> gen_toy_train(std::uint64_t seed, double noise_scale = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto t = linspace(0.0, toy::kSpan, toy::kSteps);
  std::vector<TimeSeries> out;
  for (int cls = 0; cls < 2; ++cls)
    for (std::size_t s = 0; s < toy::kTrainPerClass; ++s) {
      TimeSeries ts;
      ts.times = t;
      ts.label = cls;
      for (double tk : t) ts.values.push_back({(cls == 0 ? toy::class0(tk) : toy::class1(tk)) + noise_scale * noise(rng)});
      out.push_back(std::move(ts));
    }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Perturbed test set: 20 class-0 kinds x 50 copies whose samples 60..99 are
/// replaced by parabolas of growing curvature, then 50 class-1 series.
/// Follows the parabolic-noise generation procedure, including its unit-variance noise.
inline std::vector<TimeSeries> gen_toy_test(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto t = linspace(0.0, toy::kSpan, toy::kSteps);
  std::vector<double> base0(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) base0[k] = toy::class0(t[k]) + noise(rng);
  const double y_pass = base0[toy::kDevStart];
  std::vector<TimeSeries> out;
  for (std::size_t kind = 0; kind < toy::kKinds; ++kind) {
    std::vector<double> row = base0;
    for (std::size_t k = toy::kDevStart; k < toy::kDevEnd; ++k) row[k] = toy::deviation(kind, y_pass, t[k]);
    for (std::size_t rep = 0; rep < toy::kPerKind; ++rep) {
      TimeSeries ts;
      ts.times = t;
      ts.label = 0;
      for (double v : row) ts.values.push_back({v});
      out.push_back(std::move(ts));
    }
  }
  for (std::size_t s = 0; s < toy::kPerKind; ++s) {
    TimeSeries ts;
    ts.times = t;
    ts.label = 1;
    for (double tk : t) ts.values.push_back({toy::class1(tk) + noise(rng)});
    out.push_back(std::move(ts));
  }
  return out;
}

struct SineOptions {
  double dt = 0.1;
  double noise = 0.05;
  double amp_min = 0.5, amp_max = 1.5;
  double frequency = 1.0;
  /// Fixed phase for every series when set; otherwise uniform on [0, 2 pi).
  std::optional<double> phase;
};

/// Amplitude/phase randomized sine series on a regular grid.
inline std::vector<TimeSeries> gen_sine_regression(std::size_t n_series, std::size_t length, std::uint64_t seed,
                                                   const SineOptions& opt = {}) {
  if (length < 4) throw std::invalid_argument("gen_sine_regression: length must be >= 4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(opt.amp_min, opt.amp_max);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<TimeSeries> out;
  for (std::size_t s = 0; s < n_series; ++s) {
    const double a = amp(rng);
    const double p = opt.phase ? *opt.phase : phase(rng);
    TimeSeries ts;
    for (std::size_t k = 0; k < length; ++k) {
      const double tk = static_cast<double>(k) * opt.dt;
      ts.times.push_back(tk);
      ts.values.push_back({a * std::sin(opt.frequency * tk + p) + opt.noise * noise(rng)});
    }
    out.push_back(std::move(ts));
  }
  return out;
}

/// Masks each interior observation independently with probability `rate`;
/// first and last rows stay observed. Values are left untouched.
inline TimeSeries drop_observations(TimeSeries s, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("drop_observations: rate must lie in [0, 1)");
  if (s.length() < 2) throw std::invalid_argument("drop_observations: series would keep fewer than 2 observations");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(rate);
  s.mask.assign(s.length(), true);
  for (std::size_t i = 1; i + 1 < s.length(); ++i) s.mask[i] = !drop(rng);
  return s;
}

inline std::vector<TimeSeries> drop_observations(std::vector<TimeSeries> v, double rate, std::uint64_t seed) {
  std::mt19937_64 seeds(seed);
  for (auto& s : v) s = drop_observations(std::move(s), rate, seeds());
  return v;
}

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// CSV layout: header `t,v1,...,vD[,label]`, one row per observation, series
/// separated by blank lines. The label column is constant within a series.
inline void write_csv(std::ostream& os, const std::vector<TimeSeries>& data) {
  if (data.empty()) return;
  const std::size_t D = data.front().dims();
  const bool labeled = data.front().label.has_value();
  os << 't';
  for (std::size_t d = 0; d < D; ++d) os << ",v" << (d + 1);
  if (labeled) os << ",label";
  os << '\n';
  os.precision(17);
  for (std::size_t s = 0; s < data.size(); ++s) {
    if (s) os << '\n';
    const auto& ts = data[s];
    for (std::size_t i = 0; i < ts.length(); ++i) {
      os << ts.times[i];
      for (double v : ts.values[i]) os << ',' << v;
      if (labeled) os << ',' << ts.label.value_or(0);
      os << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const std::vector<TimeSeries>& data) {
  std::ofstream f(path);
  if (!f) throw CsvError("cannot open '" + path + "' for writing");
  write_csv(f, data);
}

inline std::vector<TimeSeries> read_csv(std::istream& is, const std::string& origin = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw CsvError(origin + ":" + std::to_string(lineno) + ": " + what);
  };
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!l.empty() && l.back() == ',') f.emplace_back();
    return f;
  };
  auto trim = [](std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
    return s;
  };
  // Header.
  while (std::getline(is, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  const auto header = split(trim(line));
  if (header.size() < 2 || trim(header[0]) != "t") fail("header must start with 't' followed by value columns");
  const bool labeled = trim(header.back()) == "label";
  const std::size_t D = header.size() - 1 - (labeled ? 1 : 0);
  if (D == 0) fail("header has no value columns");
  for (std::size_t d = 0; d < D; ++d)
    if (trim(header[1 + d]) != "v" + std::to_string(d + 1)) fail("expected column 'v" + std::to_string(d + 1) + "'");

  std::vector<TimeSeries> out;
  TimeSeries cur;
  auto flush = [&]() {
    if (!cur.times.empty()) out.push_back(std::move(cur));
    cur = TimeSeries{};
  };
  auto parse_double = [&](const std::string& cell) {
    const std::string c = trim(cell);
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(c, &pos);
    } catch (const std::exception&) {
      fail("cannot parse number '" + c + "'");
    }
    if (pos != c.size()) fail("trailing characters in number '" + c + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    const std::string l = trim(line);
    if (l.empty()) {
      flush();
      continue;
    }
    const auto f = split(l);
    if (f.size() != header.size())
      fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
    const double t = parse_double(f[0]);
    if (!cur.times.empty() && !(t > cur.times.back()))
      fail(t == cur.times.back() ? "duplicated timestamp" : "timestamps must be strictly increasing");
    std::vector<double> row(D);
    for (std::size_t d = 0; d < D; ++d) row[d] = parse_double(f[1 + d]);
    if (labeled) {
      const double lv = parse_double(f.back());
      if (lv != std::floor(lv) || lv < 0) fail("label must be a non-negative integer");
      const int lab = static_cast<int>(lv);
      if (cur.label && *cur.label != lab) fail("label changes within a series");
      cur.label = lab;
    }
    cur.times.push_back(t);
    cur.values.push_back(std::move(row));
  }
  flush();
  return out;
}

inline std::vector<TimeSeries> load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CsvError("cannot open '" + path + "'");
  return read_csv(f, path);
}

}  // namespace npc
