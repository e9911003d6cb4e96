#include "lfloop/response_format.hpp"

#include <algorithm>
#include <cctype>

#include "lfloop/errors.hpp"

namespace lfloop {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

enum class Key { None, Reasoning, Label, Keywords, Patterns };

// Recognizes "KEY:" at the start of a trimmed line; `rest` receives the text after the colon.
Key key_of(std::string_view line, std::string_view& rest) {
  line = trim(line);
  const auto colon = line.find(':');
  if (colon == std::string_view::npos) return Key::None;
  const auto head = trim(line.substr(0, colon));
  rest = trim(line.substr(colon + 1));
  if (iequals(head, "REASONING")) return Key::Reasoning;
  if (iequals(head, "LABEL")) return Key::Label;
  if (iequals(head, "KEYWORDS")) return Key::Keywords;
  if (iequals(head, "PATTERNS")) return Key::Patterns;
  return Key::None;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::optional<ClassIndex> match_class(std::string_view name, const std::vector<std::string>& classes) {
  name = trim(name);
  while (!name.empty() && (name.back() == '.' || name.back() == '"' || name.back() == '\'')) name.remove_suffix(1);
  while (!name.empty() && (name.front() == '"' || name.front() == '\'')) name.remove_prefix(1);
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (iequals(trim(name), classes[i])) return static_cast<ClassIndex>(i);
  return std::nullopt;
}

}  // namespace

ParsedResponse parse_response(std::string_view text, TaskKind task_kind, const std::vector<std::string>& classes) {
  ParsedResponse out;
  const auto lines = split_lines(text);
  bool seen_label = false;
  std::vector<std::string> keywords, patterns;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view rest;
    switch (key_of(lines[i], rest)) {
      case Key::Reasoning: {
        std::string r(rest);
        while (i + 1 < lines.size()) {
          std::string_view ignored;
          if (key_of(lines[i + 1], ignored) != Key::None) break;
          (r += '\n') += lines[++i];
        }
        out.rationale = std::string(trim(r));
        break;
      }
      case Key::Label:
        if (!seen_label) {
          seen_label = true;
          out.label = match_class(rest, classes);
        }
        break;
      case Key::Keywords: {
        if (iequals(rest, "NONE")) break;
        std::size_t start = 0;
        while (start <= rest.size()) {
          auto end = rest.find(';', start);
          if (end == std::string_view::npos) end = rest.size();
          const auto k = trim(rest.substr(start, end - start));
          if (!k.empty() && !iequals(k, "NONE")) keywords.emplace_back(k);
          start = end + 1;
        }
        break;
      }
      case Key::Patterns: {
        if (!rest.empty() && !iequals(rest, "NONE")) patterns.emplace_back(rest);
        while (i + 1 < lines.size()) {
          const auto next = trim(lines[i + 1]);
          if (next.empty() || next.front() != '-') break;
          ++i;
          const auto p = trim(next.substr(1));
          if (!p.empty() && !iequals(p, "NONE")) patterns.emplace_back(p);
        }
        break;
      }
      case Key::None:
        break;
    }
  }
  if (task_kind == TaskKind::TextClassification)
    out.keywords = std::move(keywords);
  else
    out.patterns = std::move(patterns);
  return out;
}

std::string render_response(const ParsedResponse& r, TaskKind task_kind, const std::vector<std::string>& classes,
                            bool with_rationale) {
  if (!r.label || *r.label < 0 || *r.label >= static_cast<ClassIndex>(classes.size()))
    throw UsageError("render_response: response has no valid label");
  std::string out;
  if (with_rationale) out += "REASONING: " + r.rationale.value_or("") + "\n";
  out += "LABEL: " + classes[static_cast<std::size_t>(*r.label)] + "\n";
  if (task_kind == TaskKind::TextClassification) {
    out += "KEYWORDS: ";
    if (r.keywords.empty()) out += "NONE";
    for (std::size_t i = 0; i < r.keywords.size(); ++i) {
      if (i) out += "; ";
      out += r.keywords[i];
    }
    out += "\n";
  } else if (r.patterns.empty()) {
    out += "PATTERNS: NONE\n";
  } else {
    out += "PATTERNS:\n";
    for (const auto& p : r.patterns) out += "- " + p + "\n";
  }
  return out;
}

bool well_formed(const ParsedResponse& r, TaskKind task_kind, int num_classes) {
  if (!r.label || *r.label < 0 || *r.label >= num_classes) return false;
  auto clean = [](const std::string& s) {
    return !s.empty() && s.find('\n') == std::string::npos && s.find('\r') == std::string::npos &&
           trim(s).size() == s.size() && !iequals(s, "NONE");
  };
  if (task_kind == TaskKind::TextClassification) {
    if (!r.patterns.empty()) return false;
    for (const auto& k : r.keywords)
      if (!clean(k) || k.find(';') != std::string::npos) return false;
  } else {
    if (!r.keywords.empty()) return false;
    for (const auto& p : r.patterns)
      if (!clean(p)) return false;
  }
  if (r.rationale) {
    const auto& s = *r.rationale;
    if (trim(s).size() != s.size() || s.find('\r') != std::string::npos) return false;
    for (auto line : split_lines(s)) {
      std::string_view ignored;
      if (key_of(line, ignored) != Key::None) return false;
    }
  }
  return true;
}

}  // namespace lfloop
