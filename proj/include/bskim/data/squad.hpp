#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/data/example.hpp"

namespace bskim {

struct SquadLoadStats {
  std::size_t questions = 0;
  std::size_t loaded = 0;
  std::size_t unmappable = 0;  // answer offset/text did not line up with tokens
  std::size_t truncated_away = 0;
};

struct SquadOptions {
  std::size_t max_seq_len = 128;
  std::size_t max_question_tokens = 64;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(path + ": missing field '" + key + "'");
  return j.at(key);
}

inline std::string require_string(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = require_field(j, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key + ": expected string");
  return v.get<std::string>();
}

inline const nlohmann::json& require_array(const nlohmann::json& j, const char* key, const std::string& path) {
  const auto& v = require_field(j, key, path);
  if (!v.is_array()) throw ParseError(path + "." + key + ": expected array");
  return v;
}

}  // namespace detail

// Parses SQuAD v1.1 JSON text (data -> paragraphs -> qas). The first listed
// answer is the target. Passages that do not fit are cut from the tail; an
// example whose answer is cut is dropped.
inline std::vector<QAExample> parse_squad_json(const std::string& text, Vocab& vocab, const SquadOptions& opt = {},
                                               SquadLoadStats* stats = nullptr) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("squad: malformed JSON: ") + e.what());
  }
  SquadLoadStats local;
  SquadLoadStats& st = stats ? *stats : local;
  std::vector<QAExample> out;
  const auto& data = detail::require_array(root, "data", "$");
  for (std::size_t a = 0; a < data.size(); ++a) {
    const std::string apath = "$.data[" + std::to_string(a) + "]";
    const auto& paragraphs = detail::require_array(data[a], "paragraphs", apath);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
      const std::string ppath = apath + ".paragraphs[" + std::to_string(p) + "]";
      const std::string context = detail::require_string(paragraphs[p], "context", ppath);
      const auto pieces = basic_tokenize(context);
      const auto& qas = detail::require_array(paragraphs[p], "qas", ppath);
      for (std::size_t q = 0; q < qas.size(); ++q) {
        const std::string qpath = ppath + ".qas[" + std::to_string(q) + "]";
        const std::string question = detail::require_string(qas[q], "question", qpath);
        const auto& answers = detail::require_array(qas[q], "answers", qpath);
        ++st.questions;
        if (answers.empty()) {
          ++st.unmappable;
          continue;
        }
        const std::string apath2 = qpath + ".answers[0]";
        const std::string answer_text = detail::require_string(answers[0], "text", apath2);
        const auto& start_j = detail::require_field(answers[0], "answer_start", apath2);
        if (!start_j.is_number_integer()) throw ParseError(apath2 + ".answer_start: expected integer");
        const long long start = start_j.get<long long>();
        const long long end = start + static_cast<long long>(answer_text.size());  // exclusive
        if (start < 0 || end > static_cast<long long>(context.size()) ||
            context.compare(static_cast<std::size_t>(start), answer_text.size(), answer_text) != 0) {
          ++st.unmappable;
          continue;
        }
        // Token span: every piece overlapping [start, end).
        std::size_t first = pieces.size(), last = 0;
        for (std::size_t t = 0; t < pieces.size(); ++t) {
          if (static_cast<long long>(pieces[t].char_end) > start && static_cast<long long>(pieces[t].char_begin) < end) {
            first = std::min(first, t);
            last = t;
          }
        }
        if (first == pieces.size()) {
          ++st.unmappable;
          continue;
        }
        std::vector<std::size_t> qids = vocab.encode(question);
        if (qids.size() > opt.max_question_tokens) qids.resize(opt.max_question_tokens);
        if (opt.max_seq_len < qids.size() + 4) {
          ++st.truncated_away;
          continue;
        }
        const std::size_t room = opt.max_seq_len - qids.size() - 3;
        if (last >= room) {
          ++st.truncated_away;
          continue;
        }
        std::vector<std::size_t> pids;
        for (std::size_t t = 0; t < pieces.size() && t < room; ++t) pids.push_back(vocab.id(pieces[t].text));
        out.push_back(pack_example(qids, pids, {first, last}));
        ++st.loaded;
      }
    }
  }
  return out;
}

inline std::vector<QAExample> load_squad_json(const std::string& path, Vocab& vocab, const SquadOptions& opt = {},
                                              SquadLoadStats* stats = nullptr) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open SQuAD file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_squad_json(ss.str(), vocab, opt, stats);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace bskim
