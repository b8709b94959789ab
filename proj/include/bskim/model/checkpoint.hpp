#pragma once

// Checkpoint container, little-endian:
//
//   "BSKM0001"                         8-byte magic
//   u64 x 11                           num_layers, num_heads, hidden_dim, ffn_dim,
//                                      vocab_size, max_seq_len, type_vocab_size,
//                                      block_size, conv1, conv2, conv3 channels
//   u64                                tensor count
//   per tensor: u32 name length, name bytes, u8 trainable,
//               u32 ndim, u64 dims[ndim], f64 values[prod(dims)]

#include <memory>
#include <string>

#include "bskim/binary_io.hpp"
#include "bskim/model/model.hpp"

namespace bskim {

inline constexpr std::string_view kCheckpointMagic = "BSKM0001";

inline std::string encode_checkpoint(const BlockSkimModel& m) {
  binary::Writer w;
  w.bytes(kCheckpointMagic);
  const ModelConfig& mc = m.model_config();
  const PredictorConfig& pc = m.predictor_config();
  for (std::size_t v : {mc.num_layers, mc.num_heads, mc.hidden_dim, mc.ffn_dim, mc.vocab_size, mc.max_seq_len,
                        mc.type_vocab_size, pc.block_size, pc.conv1_channels, pc.conv2_channels, pc.conv3_channels})
    w.u64(v);
  w.u64(m.store().entries().size());
  for (const auto& e : m.store().entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(e.tensor.requires_grad() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.tensor.ndim()));
    for (std::size_t d : e.tensor.shape()) w.u64(d);
    for (double v : e.tensor.values()) w.f64(v);
  }
  return w.buffer();
}

inline std::unique_ptr<BlockSkimModel> decode_checkpoint(binary::Reader& r) {
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) r.fail("bad checkpoint magic");
  ModelConfig mc;
  PredictorConfig pc;
  for (std::size_t* f : {&mc.num_layers, &mc.num_heads, &mc.hidden_dim, &mc.ffn_dim, &mc.vocab_size,
                         &mc.max_seq_len, &mc.type_vocab_size, &pc.block_size, &pc.conv1_channels,
                         &pc.conv2_channels, &pc.conv3_channels})
    *f = static_cast<std::size_t>(r.u64());
  // Reject headers whose embedding and layer weights alone could not fit in
  // the remaining payload, before allocating anything.
  {
    const long double need = 8.0L * (static_cast<long double>(mc.vocab_size) * mc.hidden_dim +
                                      static_cast<long double>(mc.num_layers) *
                                          (4.0L * mc.hidden_dim * mc.hidden_dim + 2.0L * mc.hidden_dim * mc.ffn_dim));
    if (need > static_cast<long double>(r.remaining())) r.fail("config header implies more weights than the file holds");
  }
  std::unique_ptr<BlockSkimModel> m;
  try {
    m = std::make_unique<BlockSkimModel>(mc, pc, 0);
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config header: ") + e.what());
  }
  const std::uint64_t count = r.u64();
  if (count != m->store().entries().size())
    r.fail("tensor count " + std::to_string(count) + " does not match model layout (" +
           std::to_string(m->store().entries().size()) + ")");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    Tensor* t = m->store().find(name);
    if (!t) r.fail("unknown tensor '" + name + "'");
    const bool trainable = r.u8() != 0;
    const std::uint32_t nd = r.u32();
    Shape s(nd);
    for (auto& d : s) d = static_cast<std::size_t>(r.u64());
    if (s != t->shape()) r.fail("tensor '" + name + "' has shape " + shape_str(s) + ", expected " + shape_str(t->shape()));
    r.need(t->numel() * 8);
    for (auto& v : t->values()) v = r.f64();
    t->set_requires_grad(trainable);
  }
  if (!r.at_end()) r.fail("trailing bytes after checkpoint payload");
  return m;
}

inline void save_checkpoint(const BlockSkimModel& m, const std::string& path) {
  binary::Writer w;
  w.bytes(encode_checkpoint(m));
  w.save(path);
}

inline std::unique_ptr<BlockSkimModel> load_checkpoint(const std::string& path) {
  auto r = binary::Reader::from_file(path);
  return decode_checkpoint(r);
}

}  // namespace bskim
