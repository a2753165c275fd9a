// SPDX-License-Identifier: Apache-2.0
#include "opdlab/corelang.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace opdlab {

Vocab::Vocab(std::size_t size, std::vector<std::string> names)
    : size_(size), names_(std::move(names)) {
  if (size_ < 2) throw ArgumentError("vocab size must be at least 2");
  if (!names_.empty() && names_.size() != size_)
    throw ArgumentError("vocab names must have one entry per token");
}

std::string Vocab::name(TokenId t) const {
  if (!contains(t)) throw ArgumentError("token id out of range: " + std::to_string(t));
  if (names_.empty()) return std::to_string(t);
  return names_[static_cast<std::size_t>(t)];
}

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ArgumentError("empty distribution");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ArgumentError("negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("probabilities do not sum to 1");
}

Distribution Distribution::uniform(std::size_t n) {
  return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)), Unchecked{});
}

Distribution Distribution::one_hot(std::size_t n, TokenId t) {
  if (t < 0 || static_cast<std::size_t>(t) >= n) throw ArgumentError("one_hot token out of range");
  std::vector<double> p(n, 0.0);
  p[static_cast<std::size_t>(t)] = 1.0;
  return Distribution(std::move(p), Unchecked{});
}

Distribution Distribution::floored() const {
  std::vector<double> p(probs_);
  double sum = 0.0;
  for (double& x : p) {
    x = std::max(x, kProbFloor);
    sum += x;
  }
  for (double& x : p) x /= sum;
  return Distribution(std::move(p), Unchecked{});
}

Logits::Logits(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_)
    if (!std::isfinite(v)) throw InvalidLogitsError("non-finite logit");
}

std::vector<TokenId> TopKSet::tokens() const {
  std::vector<TokenId> out;
  out.reserve(entries.size());
  for (const auto& [t, p] : entries) out.push_back(t);
  return out;
}

bool TopKSet::contains(TokenId t) const {
  return std::any_of(entries.begin(), entries.end(), [t](const auto& e) { return e.first == t; });
}

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

Distribution softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidLogitsError("empty logits");
  double mx = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidLogitsError("non-finite logit");
    mx = std::max(mx, z);
  }
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return Distribution(std::move(p), Distribution::Unchecked{});
}

Distribution softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
  if (temperature == 1.0) return softmax(logits);
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  return softmax(scaled);
}

std::vector<TokenId> rank_order(const Distribution& dist) {
  std::vector<TokenId> ids(dist.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](TokenId a, TokenId b) { return dist[a] > dist[b]; });
  return ids;
}

TopKSet topk(const Distribution& dist, std::size_t k) {
  if (k < 1 || k > dist.size())
    throw ArgumentError("topk: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(dist.size()) + "]");
  auto ids = rank_order(dist);
  TopKSet out;
  out.k = k;
  out.entries.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.entries.emplace_back(ids[i], dist[ids[i]]);
  return out;
}

double entropy(const Distribution& dist) {
  double h = 0.0;
  for (double p : dist.probs()) h -= p * safe_log(p);
  return std::max(h, 0.0);
}

double total_variation(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw ArgumentError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace opdlab
