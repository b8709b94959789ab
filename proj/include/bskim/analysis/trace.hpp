#pragma once

// Attention trace file "BSKM-TRC1", little-endian:
//   magic[9] u32 L u32 H u32 N u32 count
//   per example: u32 length[L], then for each layer H * length^2 f32 values

#include <cstdint>
#include <string>
#include <vector>

#include "bskim/binary_io.hpp"
#include "bskim/data/batch.hpp"
#include "bskim/inference/pass.hpp"

namespace bskim {

inline constexpr char kTraceMagic[] = "BSKM-TRC1";

struct TraceRecord {
  std::vector<std::uint32_t> lengths;      // tokens seen by each layer
  std::vector<std::vector<float>> layers;  // [H, n, n] row-major per layer

  float at(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const {
    const std::size_t n = lengths[layer];
    return layers[layer][(head * n + i) * n + j];
  }
  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct TraceFile {
  std::uint32_t num_layers = 0;
  std::uint32_t num_heads = 0;
  std::uint32_t max_len = 0;
  std::vector<TraceRecord> records;
  friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

inline bool bit_equal(const TraceFile& a, const TraceFile& b) {
  if (a.num_layers != b.num_layers || a.num_heads != b.num_heads || a.max_len != b.max_len ||
      a.records.size() != b.records.size())
    return false;
  for (std::size_t r = 0; r < a.records.size(); ++r) {
    if (a.records[r].lengths != b.records[r].lengths) return false;
    for (std::size_t l = 0; l < a.records[r].layers.size(); ++l) {
      const auto& x = a.records[r].layers[l];
      const auto& y = b.records[r].layers[l];
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (std::bit_cast<std::uint32_t>(x[i]) != std::bit_cast<std::uint32_t>(y[i])) return false;
    }
  }
  return true;
}

inline std::string encode_trace(const TraceFile& t) {
  binary::Writer w;
  w.bytes(std::string_view(kTraceMagic, 9));
  w.u32(t.num_layers);
  w.u32(t.num_heads);
  w.u32(t.max_len);
  w.u32(static_cast<std::uint32_t>(t.records.size()));
  for (const auto& r : t.records) {
    if (r.lengths.size() != t.num_layers || r.layers.size() != t.num_layers)
      throw DimensionError("trace: record layer count differs from header");
    for (auto n : r.lengths) w.u32(n);
    for (std::size_t l = 0; l < t.num_layers; ++l) {
      const std::size_t n = r.lengths[l];
      if (r.layers[l].size() != t.num_heads * n * n) throw DimensionError("trace: layer payload size mismatch");
      for (float v : r.layers[l]) w.f32(v);
    }
  }
  return w.buffer();
}

inline TraceFile decode_trace(binary::Reader& rd) {
  if (rd.bytes(9) != std::string_view(kTraceMagic, 9)) {
    rd.fail("bad magic (expected BSKM-TRC1)");
  }
  TraceFile t;
  t.num_layers = rd.u32();
  t.num_heads = rd.u32();
  t.max_len = rd.u32();
  const std::uint32_t count = rd.u32();
  for (std::uint32_t c = 0; c < count; ++c) {
    TraceRecord r;
    for (std::uint32_t l = 0; l < t.num_layers; ++l) {
      const std::uint32_t n = rd.u32();
      if (n > t.max_len) rd.fail("retained length " + std::to_string(n) + " exceeds N=" + std::to_string(t.max_len));
      r.lengths.push_back(n);
    }
    for (std::uint32_t l = 0; l < t.num_layers; ++l) {
      const std::size_t m = static_cast<std::size_t>(t.num_heads) * r.lengths[l] * r.lengths[l];
      rd.need(4 * m);
      std::vector<float> v(m);
      for (auto& x : v) x = rd.f32();
      r.layers.push_back(std::move(v));
    }
    t.records.push_back(std::move(r));
  }
  if (!rd.at_end()) rd.fail(std::to_string(rd.remaining()) + " trailing bytes");
  return t;
}

inline void write_trace(const TraceFile& t, const std::string& path) {
  binary::Writer w;
  w.bytes(encode_trace(t));
  w.save(path);
}

inline TraceFile read_trace(const std::string& path) {
  auto rd = binary::Reader::from_file(path);
  return decode_trace(rd);
}

// Full-length attention of every layer for one example (no skimming).
inline TraceRecord capture_trace(const BlockSkimModel& model, const QAExample& ex) {
  const std::size_t k = model.predictor_config().block_size;
  BatchItem item = make_item(ex, round_up(ex.tokens.size(), k), k, false);
  Graph g;
  g.set_grad_enabled(false);
  PassOptions opt;
  opt.capture_attention = true;
  auto r = run_pass(model, g, item, opt);
  TraceRecord rec;
  for (std::size_t l = 0; l < r.attention.size(); ++l) {
    rec.lengths.push_back(static_cast<std::uint32_t>(r.layer_lengths[l]));
    const auto& v = r.attention[l].value().values();
    rec.layers.emplace_back(v.begin(), v.end());
  }
  return rec;
}

}  // namespace bskim
