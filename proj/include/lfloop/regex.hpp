#pragma once

// Linear-time regular expressions for untrusted, model-authored patterns.
//
// Supported: literals and escapes, '.', character classes with ranges and
// \d \w \s (and negations), groups '(...)' / '(?:...)', alternation,
// greedy or lazy '*' '+' '?' '{n}' '{n,}' '{n,m}' (counts <= 1000),
// anchors '^' '$' '\A' '\z', and word boundaries '\b' '\B'.
// Rejected: backreferences, lookaround, named groups, inline flags.
//
// Matching is always case-insensitive (ASCII) and runs as a lockstep NFA
// simulation, so search time is O(text length x program size). Bytes are the
// unit of matching; non-ASCII bytes are never word characters.
//
// `{{E1}}` and `{{E2}}` are entity placeholders. They behave like an atomic
// group containing the escaped entity text supplied at instantiation time.

#include <bitset>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lfloop::regex {

class RegexError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Compiled program size cap in bytes.
inline constexpr std::size_t kMaxProgramBytes = 1u << 20;
inline constexpr int kMaxRepeat = 1000;

struct Node;

/// A parsed, validated pattern. Immutable and cheap to copy.
class Pattern {
 public:
  /// Throws RegexError on syntax errors, unsupported constructs, patterns that
  /// match the empty string, or programs over kMaxProgramBytes.
  static Pattern parse(std::string_view source);

  const std::string& source() const { return source_; }
  bool uses_placeholders() const { return placeholders_; }

 private:
  friend class Program;
  std::string source_;
  std::shared_ptr<const Node> root_;
  bool placeholders_ = false;
};

/// Executable form of a pattern with placeholders bound.
class Program {
 public:
  explicit Program(const Pattern& pattern, std::string_view entity1 = {},
                   std::string_view entity2 = {});

  /// True if the pattern matches anywhere in `text`.
  bool search(std::string_view text) const;

  std::size_t size() const { return code_.size(); }

  enum class Op : std::uint8_t { Byte, Class, Any, Split, Jmp, Assert, Match };
  enum class Assertion : std::uint8_t { TextBegin, TextEnd, WordBoundary, NotWordBoundary };

  struct Inst {
    Op op;
    Assertion assertion = Assertion::TextBegin;
    std::uint8_t byte = 0;
    std::uint32_t x = 0;  // class index, or jump/split target
    std::uint32_t y = 0;  // second split target
  };

 private:
  std::vector<Inst> code_;
  std::vector<std::bitset<256>> classes_;
};

/// Escapes every regex metacharacter in `literal`.
std::string escape(std::string_view literal);

}  // namespace lfloop::regex
