#pragma once

// Line-delimited JSON dataset dump. One record per line with exactly the
// fields tokens, question, passage, answer, evidence; spans are inclusive
// [first, last] pairs in packed coordinates.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/data/example.hpp"

namespace bskim {

inline nlohmann::ordered_json span_json(Span s) { return nlohmann::ordered_json::array({s.first, s.last}); }

inline std::string example_to_json_line(const QAExample& ex) {
  nlohmann::ordered_json j;
  j["tokens"] = ex.tokens;
  j["question"] = span_json(ex.question);
  j["passage"] = span_json(ex.passage);
  j["answer"] = span_json(ex.answer);
  j["evidence"] = nlohmann::ordered_json::array();
  for (const auto& e : ex.evidence) j["evidence"].push_back(span_json(e));
  return j.dump();
}

inline QAExample example_from_json_line(const std::string& line, const std::string& where = "record") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + ": malformed JSON: " + e.what());
  }
  if (!j.is_object() || j.size() != 5)
    throw ParseError(where + ": expected an object with exactly tokens, question, passage, answer, evidence");
  auto span = [&](const nlohmann::json& v, const std::string& name) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
      throw ParseError(where + "." + name + ": expected [first, last]");
    return Span{v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  };
  QAExample ex;
  try {
    for (const auto& t : j.at("tokens")) {
      if (!t.is_number_unsigned()) throw ParseError(where + ".tokens: expected non-negative integers");
      ex.tokens.push_back(t.get<std::size_t>());
    }
    ex.question = span(j.at("question"), "question");
    ex.passage = span(j.at("passage"), "passage");
    ex.answer = span(j.at("answer"), "answer");
    const auto& ev = j.at("evidence");
    if (!ev.is_array()) throw ParseError(where + ".evidence: expected array");
    for (std::size_t i = 0; i < ev.size(); ++i) ex.evidence.push_back(span(ev[i], "evidence[" + std::to_string(i) + "]"));
  } catch (const nlohmann::json::out_of_range& e) {
    throw ParseError(where + ": " + e.what());
  }
  try {
    ex.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return ex;
}

inline void write_dataset(const std::vector<QAExample>& data, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& ex : data) os << example_to_json_line(ex) << '\n';
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline std::vector<QAExample> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  std::vector<QAExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(example_from_json_line(line, path + ":" + std::to_string(n)));
  }
  return out;
}

}  // namespace bskim
