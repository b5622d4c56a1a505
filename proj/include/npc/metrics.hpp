#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace npc {

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: size mismatch");
  if (pred.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct MapeResult {
  double percent = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // points with |truth| <= eps
};

inline MapeResult mape(const std::vector<double>& pred, const std::vector<double>& truth, double eps = 1e-6) {
  if (pred.size() != truth.size()) throw std::invalid_argument("mape: size mismatch");
  MapeResult r;
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(truth[i]) <= eps) {
      ++r.excluded;
      continue;
    }
    s += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
    ++r.used;
  }
  r.percent = r.used ? 100.0 * s / static_cast<double>(r.used) : 0.0;
  return r;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("accuracy: size mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace npc
