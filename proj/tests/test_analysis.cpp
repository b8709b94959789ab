#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>

#include "bskim/analysis/block_attention.hpp"
#include "bskim/analysis/probe.hpp"
#include "bskim/analysis/profile.hpp"
#include "bskim/analysis/trace.hpp"
#include "bskim/data/synthetic.hpp"
#include "bskim/model/model.hpp"

using namespace bskim;
using Catch::Approx;

namespace {

Tensor uniform_attention(std::size_t n) { return Tensor({n, n}, 1.0 / static_cast<double>(n)); }

Tensor random_attention(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (t.at(i, j) = u(rng));
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) /= s;
  }
  return t;
}

TraceFile random_trace(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  TraceFile t;
  t.num_layers = 3;
  t.num_heads = 2;
  t.max_len = 12;
  for (std::size_t c = 0; c < count; ++c) {
    TraceRecord r;
    std::uint32_t n = 12;
    for (std::size_t l = 0; l < t.num_layers; ++l) {
      r.lengths.push_back(n);
      std::vector<float> v(t.num_heads * n * n);
      for (auto& x : v) x = u(rng);
      r.layers.push_back(std::move(v));
      n -= static_cast<std::uint32_t>(rng() % 4);
    }
    t.records.push_back(std::move(r));
  }
  return t;
}

TraceRecord constant_record(std::size_t layers, std::size_t heads, std::size_t n, float v) {
  TraceRecord r;
  for (std::size_t l = 0; l < layers; ++l) {
    r.lengths.push_back(static_cast<std::uint32_t>(n));
    r.layers.emplace_back(heads * n * n, v);
  }
  return r;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_dim = 8;
  c.ffn_dim = 16;
  c.vocab_size = 64;
  c.max_seq_len = 48;
  return c;
}

SynthConfig tiny_synth() {
  SynthConfig s;
  s.vocab_size = 64;
  s.seq_len = 48;
  s.question_len = 4;
  s.answer_len = 2;
  s.num_distractors = 2;
  return s;
}

}  // namespace

TEST_CASE("block attention hand sums") {
  const Tensor u = uniform_attention(64);
  CHECK(block_attention(u, {0, 15}, {16, 47}) == Approx(0.5).epsilon(1e-12));
  CHECK(block_attention(u, {3, 3}, {0, 0}) == Approx(1.0 / 64).epsilon(1e-12));
  const Tensor r = random_attention(20, 3);
  CHECK(block_attention(r, {0, 19}, {0, 19}) == Approx(1.0).epsilon(1e-12));
  for (std::size_t a = 0; a < 20; a += 7)
    for (std::size_t c = 0; c < 20; c += 5) CHECK(block_attention(r, {a, a}, {c, c}) == r.at(a, c));
}

TEST_CASE("block attention is additive over disjoint destinations") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng() % 40;
    const Tensor r = random_attention(n, rng());
    std::size_t a = rng() % n, b = rng() % n;
    if (a > b) std::swap(a, b);
    std::size_t c = rng() % n, d = rng() % n;
    if (c > d) std::swap(c, d);
    if (c == d) continue;
    const std::size_t m = c + rng() % (d - c);
    const double whole = block_attention(r, {a, b}, {c, d});
    const double parts = block_attention(r, {a, b}, {c, m}) + block_attention(r, {a, b}, {m + 1, d});
    CHECK(parts == Approx(whole).margin(1e-12));
  }
}

TEST_CASE("block attention rejects bad ranges") {
  const Tensor u = uniform_attention(8);
  CHECK_THROWS_AS(block_attention(u, {3, 2}, {0, 1}), DomainError);
  CHECK_THROWS_AS(block_attention(u, {0, 1}, {5, 4}), DomainError);
  CHECK_THROWS_AS(block_attention(u, {0, 8}, {0, 1}), DomainError);
  CHECK_THROWS_AS(block_attention(Tensor({4, 5}), {0, 1}, {0, 1}), DimensionError);
}

TEST_CASE("profile distribution on a hand-built three-token trace") {
  QAExample ex;
  ex.tokens = {special::cls, 20, 21};
  ex.question = {0, 0};
  ex.passage = {1, 2};
  ex.answer = {1, 1};
  ex.validate();
  TraceFile t;
  t.num_layers = 1;
  t.num_heads = 1;
  t.max_len = 3;
  TraceRecord r;
  r.lengths = {3};
  r.layers = {{0.2f, 0.3f, 0.5f, 0.1f, 0.6f, 0.3f, 0.4f, 0.4f, 0.2f}};
  t.records = {r};
  const auto dist = profile_distribution(t, {ex}, 4);
  REQUIRE(dist.layers.size() == 1);
  const auto& d = dist.layers[0];
  CHECK(d.answer.count == 1);
  CHECK(d.irrelevant.count == 1);
  CHECK(d.answer.mean == Approx((0.3 + 0.6 + 0.4) / 3).epsilon(1e-6));
  CHECK(d.irrelevant.mean == Approx((0.5 + 0.3 + 0.2) / 3).epsilon(1e-6));
  CHECK(d.answer.stddev == 0.0);
  CHECK(d.answer.histogram == std::vector<std::size_t>{0, 0, 0, 1});
  CHECK(d.irrelevant.histogram == std::vector<std::size_t>{0, 0, 0, 1});
  CHECK(d.bin_edges.back() == Approx(1.3 / 3).epsilon(1e-6));
  const std::string csv = dist.to_csv();
  CHECK(csv.rfind("layer,answer_count,answer_mean,answer_std,irrelevant_count,irrelevant_mean,irrelevant_std\n", 0) == 0);
}

TEST_CASE("profile distribution of uniform attention has equal means") {
  const auto data = gen_synthetic(tiny_synth(), 6);
  TraceFile t;
  t.num_layers = 2;
  t.num_heads = 2;
  t.max_len = 48;
  for (const auto& ex : data)
    t.records.push_back(constant_record(2, 2, ex.tokens.size(), 1.0f / static_cast<float>(ex.tokens.size())));
  const auto dist = profile_distribution(t, data);
  for (const auto& d : dist.layers) CHECK(d.answer.mean == Approx(d.irrelevant.mean).epsilon(1e-6));
}

TEST_CASE("profile distribution counts and histogram mass") {
  BlockSkimModel m(tiny_model(), PredictorConfig{.block_size = 8}, 5);
  const auto data = gen_synthetic(tiny_synth(), 10);
  TraceFile t{2, 2, 48, {}};
  std::size_t passage_tokens = 0;
  for (const auto& ex : data) {
    t.records.push_back(capture_trace(m, ex));
    passage_tokens += ex.passage.length();
  }
  const auto dist = profile_distribution(t, data, 7);
  for (const auto& d : dist.layers) {
    CHECK(d.answer.count + d.irrelevant.count == passage_tokens);
    std::size_t mass = 0;
    for (auto c : d.answer.histogram) mass += c;
    CHECK(mass == d.answer.count);
    mass = 0;
    for (auto c : d.irrelevant.histogram) mass += c;
    CHECK(mass == d.irrelevant.count);
  }
  const auto hj = dist.histograms_json();
  CHECK(hj.size() == 2);
  CHECK(hj[0]["bin_edges"].size() == 8);

  SECTION("misaligned inputs are rejected") {
    auto fewer = data;
    fewer.pop_back();
    CHECK_THROWS_AS(profile_distribution(t, fewer), DataError);
    auto shorter = t;
    shorter.records[0] = constant_record(2, 2, 3, 0.3f);
    CHECK_THROWS_AS(profile_distribution(shorter, data), DataError);
  }
}

TEST_CASE("probe features have six entries per head") {
  BlockSkimModel m(tiny_model(), PredictorConfig{.block_size = 8}, 5);
  const auto data = gen_synthetic(tiny_synth(), 4);
  TraceFile t{2, 2, 48, {}};
  for (const auto& ex : data) t.records.push_back(capture_trace(m, ex));
  for (std::size_t l = 0; l < 2; ++l) {
    const auto d = probe_features(t, l, data, 8);
    REQUIRE(!d.x.empty());
    CHECK(d.x.size() == d.y.size());
    for (const auto& row : d.x) {
      CHECK(row.size() == kProbeFeaturesPerHead * 2);
      for (double v : row) CHECK(std::isfinite(v));
    }
    CHECK(std::count(d.y.begin(), d.y.end(), 1) >= 4);
  }
}

TEST_CASE("probe fits separable data perfectly") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  ProbeData d;
  for (int i = 0; i < 400; ++i) {
    const int y = i % 2;
    d.x.push_back({nd(rng) + (y ? 3.0 : -3.0), nd(rng)});
    d.y.push_back(y);
  }
  const auto r = probe_fit(d);
  CHECK(r.train.accuracy() == 1.0);
  CHECK(r.heldout.accuracy() == 1.0);
  CHECK(r.heldout.f1() == 1.0);
}

TEST_CASE("probe on shuffled labels is at chance") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 1.0);
  ProbeData d;
  for (int i = 0; i < 4000; ++i) {
    d.x.push_back({nd(rng), nd(rng), nd(rng), nd(rng)});
    d.y.push_back(static_cast<int>(rng() % 2));
  }
  const auto r = probe_fit(d);
  CHECK(r.heldout.accuracy() == Approx(0.5).margin(0.05));
}

TEST_CASE("probe converges and its decisions ignore feature scaling") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  ProbeData d, scaled;
  const std::vector<double> s = {1e-3, 50.0, 7.0};
  for (int i = 0; i < 600; ++i) {
    std::vector<double> x = {nd(rng), nd(rng), nd(rng)};
    const int y = x[0] + 0.5 * x[1] - x[2] + nd(rng) > 0.0 ? 1 : 0;
    std::vector<double> xs = x;
    for (std::size_t j = 0; j < 3; ++j) xs[j] *= s[j];
    d.x.push_back(x);
    scaled.x.push_back(xs);
    d.y.push_back(y);
    scaled.y.push_back(y);
  }
  LogisticProbe a, b;
  a.fit(d);
  b.fit(scaled);
  CHECK(a.grad_norm() < 1e-6);
  CHECK(a.iterations() < 10000);
  CHECK(b.grad_norm() < 1e-6);
  for (std::size_t i = 0; i < d.x.size(); ++i) CHECK(a.predict(d.x[i]) == b.predict(scaled.x[i]));
}

TEST_CASE("probe rejects degenerate data") {
  ProbeData d;
  d.x = {{1.0}, {2.0}, {3.0}};
  d.y = {1, 1, 1};
  CHECK_THROWS_AS(probe_fit(d), DataError);
  CHECK_THROWS_AS(probe_fit(ProbeData{}), DataError);
  d.y = {0, 1};
  CHECK_THROWS_AS(LogisticProbe().fit(d), DimensionError);
}

TEST_CASE("trace files round-trip bit-exactly") {
  for (std::size_t count : {0, 1, 5}) {
    const TraceFile t = random_trace(count + 9, count);
    const std::string bytes = encode_trace(t);
    binary::Reader rd(bytes);
    const TraceFile back = decode_trace(rd);
    CHECK(bit_equal(t, back));
    CHECK(back == t);
  }
  const auto path = (std::filesystem::temp_directory_path() / "bskim_test_trace.bin").string();
  const TraceFile t = random_trace(4, 3);
  write_trace(t, path);
  CHECK(bit_equal(read_trace(path), t));
  std::remove(path.c_str());
}

TEST_CASE("captured traces round-trip") {
  BlockSkimModel m(tiny_model(), PredictorConfig{.block_size = 8}, 5);
  const auto data = gen_synthetic(tiny_synth(), 3);
  TraceFile t{2, 2, 48, {}};
  for (const auto& ex : data) t.records.push_back(capture_trace(m, ex));
  binary::Reader rd(encode_trace(t));
  CHECK(bit_equal(decode_trace(rd), t));
}

TEST_CASE("corrupt trace files are rejected") {
  std::string bytes = encode_trace(random_trace(5, 2));
  SECTION("bad magic") {
    bytes[3] = 'X';
    binary::Reader rd(bytes);
    CHECK_THROWS_AS(decode_trace(rd), FormatError);
  }
  SECTION("truncation reports the byte offset") {
    bytes.resize(bytes.size() - 5);
    binary::Reader rd(bytes);
    try {
      decode_trace(rd);
      FAIL("truncated trace decoded");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  SECTION("trailing bytes") {
    bytes += "zz";
    binary::Reader rd(bytes);
    CHECK_THROWS_AS(decode_trace(rd), FormatError);
  }
  SECTION("length above the header maximum") {
    bytes[25] = 100;
    binary::Reader rd(bytes);
    CHECK_THROWS_AS(decode_trace(rd), FormatError);
  }
}
