#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bskim/data/example.hpp"

namespace bskim {

// Needle-in-haystack QA. The question is a key sequence; the passage is
// filler with the key planted immediately before the answer, plus distractor
// keys planted elsewhere. With distractor_answers each distractor key is also
// followed by an answer-like span, so only key matching identifies the target.
//
// In evidence mode the chain is two-hop: the key is followed by a bridge
// token (the evidence phrase) and the answer follows a second occurrence of
// that bridge elsewhere in the passage.
struct SynthConfig {
  std::size_t vocab_size = 512;
  std::size_t seq_len = 128;
  std::size_t question_len = 2;
  std::size_t answer_len = 3;
  std::size_t num_distractors = 3;
  bool evidence_mode = false;
  bool distractor_answers = false;
  std::uint64_t seed = 42;

  // Disjoint id ranges for keys, answer words and filler.
  std::size_t key_vocab() const { return std::max<std::size_t>(4, (vocab_size - special::count) / 8); }
  std::size_t key_begin() const { return special::count; }
  std::size_t answer_begin() const { return key_begin() + key_vocab(); }
  std::size_t filler_begin() const { return answer_begin() + key_vocab(); }

  std::size_t passage_len() const { return seq_len - question_len - 3; }

  std::size_t record_tokens() const {
    const std::size_t tail = distractor_answers ? answer_len : 0;
    if (evidence_mode)
      return (question_len + 1 + 1 + answer_len) + num_distractors * (question_len + 1 + 1 + tail);
    return (question_len + answer_len) + num_distractors * (question_len + tail);
  }

  void validate() const {
    if (question_len == 0 || answer_len == 0) throw ConfigError("synth: question_len and answer_len must be >= 1");
    if (filler_begin() >= vocab_size) throw ConfigError("synth: vocab_size too small for key/answer/filler ranges");
    if (seq_len < question_len + 3 + 1) throw ConfigError("synth: seq_len too small for packing");
    const std::size_t records = evidence_mode ? 2 * (1 + num_distractors) : 1 + num_distractors;
    if (record_tokens() + records > passage_len())
      throw ConfigError("synth: " + std::to_string(record_tokens()) + " planted tokens do not fit a passage of " +
                        std::to_string(passage_len()));
    std::size_t distinct = 1;
    for (std::size_t i = 0; i < question_len && distinct < 1 + num_distractors; ++i) distinct *= key_vocab();
    if (distinct < 1 + num_distractors) throw ConfigError("synth: key space too small for distractors");
  }
};

inline std::vector<QAExample> gen_synthetic(const SynthConfig& cfg, std::size_t n) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto pick = [&](std::size_t lo, std::size_t count) {
    return lo + std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
  };
  const std::size_t K = cfg.key_vocab();
  const std::size_t filler_count = cfg.vocab_size - cfg.filler_begin();
  auto random_key = [&] {
    std::vector<std::size_t> k(cfg.question_len);
    for (auto& t : k) t = pick(cfg.key_begin(), K);
    return k;
  };
  auto random_answer = [&] {
    std::vector<std::size_t> a(cfg.answer_len);
    for (auto& t : a) t = pick(cfg.answer_begin(), K);
    return a;
  };

  std::vector<QAExample> out;
  out.reserve(n);
  for (std::size_t e = 0; e < n; ++e) {
    struct Record {
      std::vector<std::size_t> tokens;
      int role;  // 0 = answer record, 1 = evidence phrase, 2 = distractor
    };
    std::vector<Record> recs;
    const auto key = random_key();
    std::vector<std::vector<std::size_t>> used{key};
    auto fresh_key = [&] {
      for (;;) {
        auto k = random_key();
        if (std::find(used.begin(), used.end(), k) == used.end()) {
          used.push_back(k);
          return k;
        }
      }
    };
    std::vector<std::size_t> used_bridges;
    auto fresh_bridge = [&] {
      for (;;) {
        const std::size_t b = pick(cfg.key_begin(), K);
        if (std::find(used_bridges.begin(), used_bridges.end(), b) == used_bridges.end() &&
            std::find(key.begin(), key.end(), b) == key.end()) {
          used_bridges.push_back(b);
          return b;
        }
      }
    };
    auto add_chain = [&](const std::vector<std::size_t>& k, bool target) {
      std::vector<std::size_t> ans;
      if (target || cfg.distractor_answers) ans = random_answer();
      if (!cfg.evidence_mode) {
        Record r{k, target ? 0 : 2};
        r.tokens.insert(r.tokens.end(), ans.begin(), ans.end());
        recs.push_back(std::move(r));
        return;
      }
      const std::size_t bridge = fresh_bridge();
      Record ev{k, target ? 1 : 2};
      ev.tokens.push_back(bridge);
      Record an{{bridge}, target ? 0 : 2};
      an.tokens.insert(an.tokens.end(), ans.begin(), ans.end());
      recs.push_back(std::move(ev));
      recs.push_back(std::move(an));
    };
    add_chain(key, true);
    for (std::size_t d = 0; d < cfg.num_distractors; ++d) add_chain(fresh_key(), false);
    std::shuffle(recs.begin(), recs.end(), rng);

    // Distribute filler into gaps: choose record slots among free + r positions.
    const std::size_t P = cfg.passage_len();
    std::size_t planted = 0;
    for (const auto& r : recs) planted += r.tokens.size();
    const std::size_t free = P - planted, r = recs.size();
    std::vector<std::size_t> slots(free + r);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    std::sample(slots.begin(), slots.end(), std::back_inserter(chosen), r, rng);
    std::sort(chosen.begin(), chosen.end());

    std::vector<std::size_t> passage;
    Span answer{}, evidence{};
    std::size_t next_record = 0;
    for (std::size_t s = 0; s < free + r; ++s) {
      if (next_record < r && chosen[next_record] == s) {
        const Record& rec = recs[next_record++];
        const std::size_t at = passage.size();
        passage.insert(passage.end(), rec.tokens.begin(), rec.tokens.end());
        if (rec.role == 0) {
          const std::size_t lead = cfg.evidence_mode ? 1 : cfg.question_len;
          answer = {at + lead, at + rec.tokens.size() - 1};
        } else if (rec.role == 1) {
          evidence = {at, at + rec.tokens.size() - 1};
        }
      } else {
        passage.push_back(pick(cfg.filler_begin(), filler_count));
      }
    }
    std::vector<Span> ev;
    if (cfg.evidence_mode) ev.push_back(evidence);
    out.push_back(pack_example(key, passage, answer, ev));
  }
  return out;
}

// Word table matching the synthetic id layout: k<i>, a<i>, w<i>.
inline Vocab synthetic_vocab(const SynthConfig& cfg) {
  Vocab v(cfg.vocab_size);
  const std::size_t K = cfg.key_vocab();
  for (std::size_t i = 0; i < K; ++i) v.insert("k" + std::to_string(i));
  for (std::size_t i = 0; i < K; ++i) v.insert("a" + std::to_string(i));
  for (std::size_t i = cfg.filler_begin(); i < cfg.vocab_size; ++i) v.insert("w" + std::to_string(i - cfg.filler_begin()));
  v.freeze();
  return v;
}

}  // namespace bskim
