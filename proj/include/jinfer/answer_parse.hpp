#pragma once

#include <string>

#include "jinfer/types.hpp"
#include "jinfer/uicl.hpp"

namespace jinfer {

// How raw completion text maps back to an answer.
//   ExactMatch:  the whole (normalized) response must equal an answer string.
//   Regex:       ECMAScript regex with one capture group; the capture is the
//                candidate answer.
//   AnswerLine:  the last non-empty line must read "Answer: <candidate>".
// Normalization before comparing against answer strings: trim whitespace,
// drop one trailing period, case-fold ASCII.
enum class ParserKind { ExactMatch, Regex, AnswerLine };

struct AnswerParser {
  ParserKind kind = ParserKind::ExactMatch;
  std::string pattern;  // Regex only
};

struct ParsedAnswer {
  bool rejected = true;
  int index = -1;        // close-ended answer, -1 when open-ended
  std::string text;      // matched answer string (normalized for close-ended)
  std::string reasoning; // text preceding the answer line (AnswerLine only)
};

std::string normalize_answer_text(const std::string& raw);

// Close-ended when `answers` is non-null (candidates must resolve to an
// answer index); open-ended otherwise (any captured candidate is accepted).
ParsedAnswer parse_answer(const AnswerParser& parser, const std::string& raw,
                          const AnswerSet* answers);

// Parse a raw response into a turn label, rejecting anything unformatted.
// Rejected answers never vote and never enter support pools; the runner keeps
// the instance's previous-turn label instead.
SampleOutcome filter_unformatted(const std::string& raw, const AnswerSet& answers,
                                 const AnswerParser& parser);

}  // namespace jinfer
