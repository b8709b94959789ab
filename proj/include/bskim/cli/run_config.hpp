#pragma once

// Plain-text run configuration: one `section.key = value` per line, `#`
// starts a comment. Unknown keys and malformed values are ConfigErrors.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bskim/data/synthetic.hpp"
#include "bskim/inference/policy.hpp"
#include "bskim/model/config.hpp"
#include "bskim/training/config.hpp"

namespace bskim {

struct RunConfig {
  ModelConfig model;
  PredictorConfig predictor;
  TrainConfig train;
  SkimPolicy skim;
  SynthConfig synth;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Every key in table order; parse_run_config(dump()) reproduces *this.
  std::string dump() const {
    std::string s;
    for (const auto& k : keys()) s += k + " = " + get(k) + "\n";
    return s;
  }

  // Cross-field consistency, then each component's own checks.
  void resolve() {
    train.block_size = predictor.block_size;
    train.train_skim_policy = skim;
    model.validate();
    predictor.validate();
    train.validate();
    skim.validate(model.num_layers);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean '" + v + "' for " + key + " (true|false)");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(M m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_number<std::size_t>(k, v); },
          [m](const RunConfig& c) { return std::to_string(m(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field u64_field(M m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_number<std::uint64_t>(k, v); },
          [m](const RunConfig& c) { return std::to_string(m(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field double_field(M m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_number<double>(k, v); },
          [m](const RunConfig& c) { return fmt_double(m(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Field bool_field(M m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { m(c) = parse_bool(k, v); },
          [m](const RunConfig& c) { return std::string(m(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

inline const std::vector<std::pair<std::string, Field>>& field_table() {
  static const std::vector<std::pair<std::string, Field>> t = [] {
    std::vector<std::pair<std::string, Field>> f;
#define BSKIM_REF(expr) [](RunConfig& c) -> auto& { return expr; }
    f.emplace_back("model.num_layers", size_field(BSKIM_REF(c.model.num_layers)));
    f.emplace_back("model.num_heads", size_field(BSKIM_REF(c.model.num_heads)));
    f.emplace_back("model.hidden_dim", size_field(BSKIM_REF(c.model.hidden_dim)));
    f.emplace_back("model.ffn_dim", size_field(BSKIM_REF(c.model.ffn_dim)));
    f.emplace_back("model.vocab_size", size_field(BSKIM_REF(c.model.vocab_size)));
    f.emplace_back("model.max_seq_len", size_field(BSKIM_REF(c.model.max_seq_len)));
    f.emplace_back("model.type_vocab_size", size_field(BSKIM_REF(c.model.type_vocab_size)));
    f.emplace_back("predictor.block_size", size_field(BSKIM_REF(c.predictor.block_size)));
    f.emplace_back("predictor.conv1_channels", size_field(BSKIM_REF(c.predictor.conv1_channels)));
    f.emplace_back("predictor.conv2_channels", size_field(BSKIM_REF(c.predictor.conv2_channels)));
    f.emplace_back("predictor.conv3_channels", size_field(BSKIM_REF(c.predictor.conv3_channels)));
    f.emplace_back("train.mode", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                         c.train.mode = parse_train_mode(v);
                                       },
                                       [](const RunConfig& c) { return std::string(to_string(c.train.mode)); }});
    f.emplace_back("train.lr", double_field(BSKIM_REF(c.train.lr)));
    f.emplace_back("train.batch_size", size_field(BSKIM_REF(c.train.batch_size)));
    f.emplace_back("train.epochs", size_field(BSKIM_REF(c.train.epochs)));
    f.emplace_back("train.freeze_epochs", size_field(BSKIM_REF(c.train.freeze_epochs)));
    f.emplace_back("train.alpha", double_field(BSKIM_REF(c.train.alpha)));
    f.emplace_back("train.beta", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                         if (v == "auto") c.train.beta.reset();
                                         else c.train.beta = parse_number<double>(k, v);
                                       },
                                       [](const RunConfig& c) {
                                         return c.train.beta ? fmt_double(*c.train.beta) : std::string("auto");
                                       }});
    f.emplace_back("train.weight_decay", double_field(BSKIM_REF(c.train.weight_decay)));
    f.emplace_back("train.evidence_labels", bool_field(BSKIM_REF(c.train.evidence_labels)));
    f.emplace_back("train.skimmed_logit", double_field(BSKIM_REF(c.train.skimmed_logit)));
    f.emplace_back("train.seed", u64_field(BSKIM_REF(c.train.seed)));
    f.emplace_back("skim.threshold", double_field(BSKIM_REF(c.skim.threshold)));
    f.emplace_back("skim.active_layers", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                                 if (v == "default") c.skim.active_layers.reset();
                                                 else c.skim.active_layers = parse_layer_list(v);
                                               },
                                               [](const RunConfig& c) {
                                                 if (!c.skim.active_layers) return std::string("default");
                                                 std::string s;
                                                 for (std::size_t l : *c.skim.active_layers)
                                                   s += (s.empty() ? "" : ",") + std::to_string(l);
                                                 return s;
                                               }});
    f.emplace_back("skim.top_fraction", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                                                if (v == "none") c.skim.top_fraction.reset();
                                                else c.skim.top_fraction = parse_number<double>(k, v);
                                              },
                                              [](const RunConfig& c) {
                                                return c.skim.top_fraction ? fmt_double(*c.skim.top_fraction)
                                                                           : std::string("none");
                                              }});
    f.emplace_back("synth.vocab_size", size_field(BSKIM_REF(c.synth.vocab_size)));
    f.emplace_back("synth.seq_len", size_field(BSKIM_REF(c.synth.seq_len)));
    f.emplace_back("synth.question_len", size_field(BSKIM_REF(c.synth.question_len)));
    f.emplace_back("synth.answer_len", size_field(BSKIM_REF(c.synth.answer_len)));
    f.emplace_back("synth.num_distractors", size_field(BSKIM_REF(c.synth.num_distractors)));
    f.emplace_back("synth.evidence_mode", bool_field(BSKIM_REF(c.synth.evidence_mode)));
    f.emplace_back("synth.distractor_answers", bool_field(BSKIM_REF(c.synth.distractor_answers)));
    f.emplace_back("synth.seed", u64_field(BSKIM_REF(c.synth.seed)));
#undef BSKIM_REF
    return f;
  }();
  return t;
}

inline const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : field_table())
    if (k == key) return f;
  throw ConfigError("config: unknown key '" + key + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  detail::find_field(key).set(*this, key, value);
}

inline std::string RunConfig::get(const std::string& key) const { return detail::find_field(key).get(*this); }

inline const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& e : detail::field_table()) out.push_back(e.first);
    return out;
  }();
  return k;
}

// Applies `key = value` lines on top of `base`.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}, const std::string& where = "config") {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ":" + std::to_string(n) + ": expected key = value, got '" + line + "'");
    try {
      base.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), std::move(base), path);
}

}  // namespace bskim
