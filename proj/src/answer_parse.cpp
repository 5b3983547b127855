#include "jinfer/answer_parse.hpp"

#include <cctype>
#include <regex>
#include <stdexcept>

namespace jinfer {

std::string normalize_answer_text(const std::string& raw) {
  std::size_t begin = 0;
  std::size_t end = raw.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(raw[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
  if (end > begin && raw[end - 1] == '.') --end;  // one trailing period
  while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
  std::string out = raw.substr(begin, end - begin);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

namespace {

int match_answer(const std::string& candidate, const AnswerSet& answers) {
  const std::string norm = normalize_answer_text(candidate);
  for (int k = 0; k < answers.size(); ++k) {
    if (normalize_answer_text(answers.name(k)) == norm) return k;
  }
  return -1;
}

ParsedAnswer resolve(const std::string& candidate, const std::string& reasoning,
                     const AnswerSet* answers) {
  ParsedAnswer out;
  out.reasoning = reasoning;
  if (answers != nullptr) {
    const int k = match_answer(candidate, *answers);
    if (k < 0) return out;  // rejected
    out.rejected = false;
    out.index = k;
    out.text = answers->name(k);
  } else {
    const std::string norm = normalize_answer_text(candidate);
    if (norm.empty()) return out;
    out.rejected = false;
    out.text = norm;
  }
  return out;
}

// Last non-empty line plus everything before it.
std::pair<std::string, std::string> split_last_line(const std::string& raw) {
  std::size_t end = raw.size();
  while (end > 0 && (raw[end - 1] == '\n' || raw[end - 1] == '\r')) --end;
  if (end == 0) return {std::string(), std::string()};
  std::size_t begin = raw.rfind('\n', end - 1);
  begin = (begin == std::string::npos) ? 0 : begin + 1;
  return {raw.substr(begin, end - begin), raw.substr(0, begin)};
}

}  // namespace

ParsedAnswer parse_answer(const AnswerParser& parser, const std::string& raw,
                          const AnswerSet* answers) {
  switch (parser.kind) {
    case ParserKind::ExactMatch:
      return resolve(raw, std::string(), answers);

    case ParserKind::Regex: {
      if (parser.pattern.empty())
        throw std::invalid_argument("parse_answer: Regex parser needs a pattern");
      const std::regex re(parser.pattern, std::regex::ECMAScript);
      std::smatch match;
      if (!std::regex_search(raw, match, re) || match.size() < 2) return ParsedAnswer{};
      return resolve(match[1].str(), raw.substr(0, static_cast<std::size_t>(match.position(0))),
                     answers);
    }

    case ParserKind::AnswerLine: {
      static const std::regex re(R"([Aa]nswer\s*:\s*(.*))");
      auto [last, before] = split_last_line(raw);
      std::smatch match;
      if (!std::regex_search(last, match, re)) return ParsedAnswer{};
      // Trim trailing newline clutter off the carried reasoning.
      while (!before.empty() && (before.back() == '\n' || before.back() == '\r')) before.pop_back();
      return resolve(match[1].str(), before, answers);
    }
  }
  return ParsedAnswer{};
}

SampleOutcome filter_unformatted(const std::string& raw, const AnswerSet& answers,
                                 const AnswerParser& parser) {
  const ParsedAnswer parsed = parse_answer(parser, raw, &answers);
  SampleOutcome out;
  if (parsed.rejected) {
    out.rejected = true;
    return out;
  }
  out.label.index = parsed.index;
  out.label.text = parsed.text;
  out.label.reasoning = parsed.reasoning;
  return out;
}

}  // namespace jinfer
