#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/analysis/trace.hpp"
#include "bskim/data/example.hpp"

namespace bskim {

struct DistStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<std::size_t> histogram;
};

struct LayerDistribution {
  DistStats answer;
  DistStats irrelevant;
  std::vector<double> bin_edges;  // bins + 1 edges on [0, max]
};

struct AttnDistribution {
  std::vector<LayerDistribution> layers;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "layer,answer_count,answer_mean,answer_std,irrelevant_count,irrelevant_mean,irrelevant_std\n";
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& d = layers[l];
      os << l << ',' << d.answer.count << ',' << d.answer.mean << ',' << d.answer.stddev << ','
         << d.irrelevant.count << ',' << d.irrelevant.mean << ',' << d.irrelevant.stddev << '\n';
    }
    return os.str();
  }

  nlohmann::ordered_json histograms_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& d : layers)
      j.push_back({{"bin_edges", d.bin_edges}, {"answer", d.answer.histogram}, {"irrelevant", d.irrelevant.histogram}});
    return j;
  }
};

// Per token, the attention it receives: mean over non-pad query rows of its
// column weight, averaged over heads. Entries for pad tokens are 0.
inline std::vector<double> received_attention(const TraceRecord& rec, std::size_t layer, std::size_t heads,
                                              std::size_t non_pad) {
  const std::size_t n = rec.lengths.at(layer);
  if (non_pad > n) throw DataError("received_attention: trace shorter than example");
  std::vector<double> out(n, 0.0);
  if (non_pad == 0) return out;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < non_pad; ++i)
      for (std::size_t j = 0; j < non_pad; ++j) out[j] += rec.at(layer, h, i, j);
  for (auto& v : out) v /= static_cast<double>(non_pad * heads);
  return out;
}

namespace detail {

inline DistStats summarize(const std::vector<double>& xs, const std::vector<double>& edges) {
  DistStats s;
  s.count = xs.size();
  const std::size_t bins = edges.size() - 1;
  s.histogram.assign(bins, 0);
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
  const double hi = edges.back();
  for (double x : xs) {
    std::size_t b = hi > 0.0 ? static_cast<std::size_t>(x / hi * static_cast<double>(bins)) : 0;
    s.histogram[std::min(b, bins - 1)]++;
  }
  return s;
}

}  // namespace detail

// Received attention of answer tokens versus the other passage tokens, per
// layer. traces.records[i] must belong to examples[i] and be unskimmed.
inline AttnDistribution profile_distribution(const TraceFile& traces, const std::vector<QAExample>& examples,
                                             std::size_t bins = 20) {
  if (traces.records.size() != examples.size())
    throw DataError("profile_distribution: " + std::to_string(traces.records.size()) + " traces for " +
                    std::to_string(examples.size()) + " examples");
  if (bins == 0) throw ConfigError("profile_distribution: bins must be >= 1");
  AttnDistribution dist;
  for (std::size_t l = 0; l < traces.num_layers; ++l) {
    std::vector<double> ans, irr;
    for (std::size_t e = 0; e < examples.size(); ++e) {
      const auto& ex = examples[e];
      const auto& rec = traces.records[e];
      if (rec.lengths.at(l) < ex.tokens.size())
        throw DataError("profile_distribution: trace " + std::to_string(e) + " misaligned with its example");
      const auto recv = received_attention(rec, l, traces.num_heads, ex.pad_start());
      for (std::size_t j = ex.passage.first; j <= ex.passage.last; ++j)
        (ex.answer.contains(j) ? ans : irr).push_back(recv[j]);
    }
    double hi = 0.0;
    for (double x : ans) hi = std::max(hi, x);
    for (double x : irr) hi = std::max(hi, x);
    LayerDistribution ld;
    for (std::size_t b = 0; b <= bins; ++b) ld.bin_edges.push_back(hi * static_cast<double>(b) / static_cast<double>(bins));
    ld.answer = detail::summarize(ans, ld.bin_edges);
    ld.irrelevant = detail::summarize(irr, ld.bin_edges);
    dist.layers.push_back(std::move(ld));
  }
  return dist;
}

}  // namespace bskim
