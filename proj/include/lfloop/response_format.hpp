#pragma once

// Line-oriented response grammar shared by prompts, the parser and the mock oracle:
//
//   REASONING: <free text, may continue on following lines>     (optional)
//   LABEL: <class name>                                         (required)
//   KEYWORDS: <k1>; <k2>; ...  |  KEYWORDS: NONE                (text tasks)
//   PATTERNS:                                                   (relation tasks)
//   - <regex>
//   - <regex>                  |  PATTERNS: NONE
//
// Keys and class names are matched case-insensitively.

#include <optional>
#include <string>
#include <vector>

#include "lfloop/corpus.hpp"

namespace lfloop {

struct ParsedResponse {
  std::optional<ClassIndex> label;  // nullopt: unparseable
  std::vector<std::string> keywords;
  std::vector<std::string> patterns;
  std::optional<std::string> rationale;

  bool parseable() const { return label.has_value(); }
  bool operator==(const ParsedResponse&) const = default;
};

ParsedResponse parse_response(std::string_view text, TaskKind task_kind, const std::vector<std::string>& classes);

/// Renders in the grammar above. Requires a label.
std::string render_response(const ParsedResponse& response, TaskKind task_kind,
                            const std::vector<std::string>& classes, bool with_rationale);

/// True if render_response followed by parse_response reproduces `response`
/// (no separators or newlines inside payloads, trimmed non-empty strings).
bool well_formed(const ParsedResponse& response, TaskKind task_kind, int num_classes);

}  // namespace lfloop
