#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "npc/autodiff.hpp"
#include "npc/tensor.hpp"

namespace npc {

/// Which optimization variable set a parameter belongs to: the discrete
/// controller (psi) or the continuous model and its readouts (phi).
enum class Partition { kController, kContinuous };

inline const char* to_string(Partition p) { return p == Partition::kController ? "psi" : "phi"; }
inline Partition partition_from_string(const std::string& s) {
  if (s == "psi") return Partition::kController;
  if (s == "phi") return Partition::kContinuous;
  throw std::invalid_argument("unknown partition tag '" + s + "'");
}

/// Ordered collection of named parameter tensors.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Partition partition;
    Tensor value;
  };

  /// Adds a parameter; names must be unique.
  std::size_t add(std::string name, Partition part, Tensor value) {
    if (index_.contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), part, std::move(value)});
    return entries_.size() - 1;
  }

  /// Adds a parameter drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  std::size_t add_uniform(std::string name, Partition part, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return add(std::move(name), part, std::move(t));
  }

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
    return it->second;
  }

  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<Entry>& entries() const { return entries_; }
  Tensor& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).value; }
  Tensor& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Partition partition(std::size_t i) const { return entries_.at(i).partition; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries_) {
      arr.push_back({{"name", e.name},
                     {"partition", to_string(e.partition)},
                     {"shape", e.value.shape().to_vector()},
                     {"values", e.value.values()}});
    }
    return arr;
  }

  static ParamStore from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) throw std::invalid_argument("ParamStore: checkpoint params must be an array");
    ParamStore s;
    for (const auto& rec : arr) {
      auto shape = rec.at("shape").get<std::vector<std::size_t>>();
      auto values = rec.at("values").get<std::vector<double>>();
      s.add(rec.at("name").get<std::string>(), partition_from_string(rec.at("partition").get<std::string>()),
            Tensor(Shape(shape), std::move(values)));
    }
    return s;
  }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = o.entries_[i];
      if (a.name != b.name || a.partition != b.partition || a.value.shape() != b.value.shape() ||
          a.value.values() != b.value.values())
        return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as differentiable leaves, in store order.
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, const ParamStore& store) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& e : store.entries()) vars_.push_back(tape.leaf(e.value));
  }

  /// Binds caller-provided leaves, one per store entry with matching shapes.
  ParamBinding(const ParamStore& store, std::vector<ad::Var> vars) : store_(&store), vars_(std::move(vars)) {
    if (vars_.size() != store.size()) throw std::invalid_argument("ParamBinding: expected one var per parameter");
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].shape() != store.entries()[i].value.shape())
        throw std::invalid_argument("ParamBinding: shape mismatch for " + store.entries()[i].name);
  }

  const ad::Var& operator[](std::size_t i) const { return vars_.at(i); }
  const ad::Var& operator[](const std::string& name) const { return vars_.at(store_->index_of(name)); }
  std::size_t size() const { return vars_.size(); }

  /// Adjoints after tape.backward(), aligned with the store.
  std::vector<Tensor> gradients() const {
    std::vector<Tensor> g;
    g.reserve(vars_.size());
    for (const auto& v : vars_) g.push_back(v.tape->grad(v));
    return g;
  }

 private:
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

}  // namespace npc
