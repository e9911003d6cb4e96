#include "lfloop/regex.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

namespace lfloop::regex {

using Assertion = Program::Assertion;
using Op = Program::Op;
using ByteSet = std::bitset<256>;

struct Node {
  enum class Kind { Empty, Byte, Class, Any, Concat, Alt, Repeat, Assert, Placeholder };
  Kind kind = Kind::Empty;
  std::uint8_t byte = 0;
  ByteSet set;
  std::vector<std::shared_ptr<const Node>> kids;
  int min = 0;
  int max = 0;  // -1: unbounded
  bool greedy = true;
  Assertion assertion = Assertion::TextBegin;
  int which = 0;  // placeholder 1 or 2
};

namespace {

using NodePtr = std::shared_ptr<const Node>;

bool is_word(unsigned char c) { return std::isalnum(c) || c == '_'; }

std::uint8_t fold(std::uint8_t c) { return static_cast<std::uint8_t>(std::tolower(c)); }

void fold_case(ByteSet& s) {
  for (int c = 'a'; c <= 'z'; ++c) {
    const int u = c - 'a' + 'A';
    if (s[c] || s[u]) s.set(c).set(u);
  }
}

ByteSet digit_set() {
  ByteSet s;
  for (int c = '0'; c <= '9'; ++c) s.set(c);
  return s;
}
ByteSet word_set() {
  ByteSet s;
  for (int c = 0; c < 128; ++c)
    if (is_word(static_cast<unsigned char>(c))) s.set(c);
  return s;
}
ByteSet space_set() {
  ByteSet s;
  for (char c : std::string_view(" \t\n\r\f\v")) s.set(static_cast<unsigned char>(c));
  return s;
}

NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

NodePtr make_class(ByteSet s) {
  Node n;
  n.kind = Node::Kind::Class;
  n.set = s;
  return make(std::move(n));
}

class Parser {
 public:
  explicit Parser(std::string_view src) : s_(src) {}

  NodePtr parse() {
    auto root = parse_alt();
    if (pos_ < s_.size()) {
      if (s_[pos_] == ')') fail("unmatched ')'");
      fail("unexpected character");
    }
    return root;
  }

  bool placeholders = false;

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw RegexError("invalid pattern at offset " + std::to_string(pos_) + ": " + why);
  }
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  bool starts_with(std::string_view p) const { return s_.substr(pos_, p.size()) == p; }

  NodePtr parse_alt() {
    std::vector<NodePtr> branches{parse_concat()};
    while (!eof() && peek() == '|') {
      ++pos_;
      branches.push_back(parse_concat());
    }
    if (branches.size() == 1) return branches.front();
    Node n;
    n.kind = Node::Kind::Alt;
    n.kids = std::move(branches);
    return make(std::move(n));
  }

  NodePtr parse_concat() {
    std::vector<NodePtr> items;
    while (!eof() && peek() != '|' && peek() != ')') items.push_back(parse_repeat());
    if (items.empty()) return make(Node{});
    if (items.size() == 1) return items.front();
    Node n;
    n.kind = Node::Kind::Concat;
    n.kids = std::move(items);
    return make(std::move(n));
  }

  // Parses "{n}", "{n,}" or "{n,m}" at pos_. Leaves pos_ untouched if the
  // braces do not form a valid counted repetition.
  bool try_counted(int& lo, int& hi) {
    std::size_t p = pos_ + 1;
    auto number = [&](int& out) {
      const std::size_t start = p;
      long v = 0;
      while (p < s_.size() && std::isdigit(static_cast<unsigned char>(s_[p]))) {
        v = v * 10 + (s_[p] - '0');
        if (v > kMaxRepeat) v = kMaxRepeat + 1;
        ++p;
      }
      out = static_cast<int>(v);
      return p > start;
    };
    if (!number(lo)) return false;
    hi = lo;
    if (p < s_.size() && s_[p] == ',') {
      ++p;
      if (!number(hi)) hi = -1;
    }
    if (p >= s_.size() || s_[p] != '}') return false;
    pos_ = p + 1;
    if (lo > kMaxRepeat || hi > kMaxRepeat) fail("repetition count exceeds 1000");
    if (hi != -1 && hi < lo) fail("repetition range {n,m} with m < n");
    return true;
  }

  NodePtr parse_repeat() {
    NodePtr atom = parse_atom();
    bool quantified = false;
    while (!eof()) {
      int lo = 0, hi = 0;
      const char c = peek();
      if (c == '*') {
        lo = 0, hi = -1, ++pos_;
      } else if (c == '+') {
        lo = 1, hi = -1, ++pos_;
      } else if (c == '?') {
        lo = 0, hi = 1, ++pos_;
      } else if (c == '{' && !starts_with("{{E")) {
        if (!try_counted(lo, hi)) break;
      } else {
        break;
      }
      if (quantified) fail("nested quantifier");
      if (atom->kind == Node::Kind::Assert) fail("quantifier applied to an assertion");
      quantified = true;
      Node n;
      n.kind = Node::Kind::Repeat;
      n.min = lo;
      n.max = hi;
      if (!eof() && peek() == '?') {
        n.greedy = false;
        ++pos_;
      }
      if (!eof() && peek() == '+') fail("possessive quantifiers are not supported");
      n.kids = {atom};
      atom = make(std::move(n));
    }
    return atom;
  }

  NodePtr parse_atom() {
    const char c = peek();
    switch (c) {
      case '(': {
        ++pos_;
        if (starts_with("?")) {
          if (starts_with("?:")) {
            pos_ += 2;
          } else if (starts_with("?=") || starts_with("?!") || starts_with("?<=") ||
                     starts_with("?<!")) {
            fail("lookaround is not supported");
          } else if (starts_with("?P<") || starts_with("?<") || starts_with("?'")) {
            fail("named groups are not supported");
          } else {
            fail("inline flags and special groups are not supported");
          }
        }
        auto inner = parse_alt();
        if (eof() || peek() != ')') fail("missing ')'");
        ++pos_;
        return inner;
      }
      case '[':
        return parse_class();
      case '.': {
        ++pos_;
        Node n;
        n.kind = Node::Kind::Any;
        return make(std::move(n));
      }
      case '^':
      case '$': {
        ++pos_;
        Node n;
        n.kind = Node::Kind::Assert;
        n.assertion = c == '^' ? Assertion::TextBegin : Assertion::TextEnd;
        return make(std::move(n));
      }
      case '*':
      case '+':
      case '?':
        fail("nothing to repeat");
      case '\\':
        return parse_escape();
      case '{':
        if (starts_with("{{E1}}") || starts_with("{{E2}}")) {
          Node n;
          n.kind = Node::Kind::Placeholder;
          n.which = s_[pos_ + 3] - '0';
          pos_ += 6;
          placeholders = true;
          return make(std::move(n));
        }
        [[fallthrough]];
      default: {
        ++pos_;
        Node n;
        n.kind = Node::Kind::Byte;
        n.byte = fold(static_cast<std::uint8_t>(c));
        return make(std::move(n));
      }
    }
  }

  // Escape shared by atoms and class members. Returns true with `set` filled
  // for class escapes, or false with `byte` filled for a single byte.
  bool parse_escape_member(ByteSet& set, std::uint8_t& byte, bool in_class) {
    ++pos_;  // backslash
    if (eof()) fail("trailing backslash");
    const char c = s_[pos_++];
    switch (c) {
      case 'd':
        set = digit_set();
        return true;
      case 'D':
        set = ~digit_set();
        return true;
      case 'w':
        set = word_set();
        return true;
      case 'W':
        set = ~word_set();
        return true;
      case 's':
        set = space_set();
        return true;
      case 'S':
        set = ~space_set();
        return true;
      case 'n':
        byte = '\n';
        return false;
      case 't':
        byte = '\t';
        return false;
      case 'r':
        byte = '\r';
        return false;
      case 'f':
        byte = '\f';
        return false;
      case 'v':
        byte = '\v';
        return false;
      case 'x': {
        auto hex = [&](char h) -> int {
          if (h >= '0' && h <= '9') return h - '0';
          h = static_cast<char>(std::tolower(static_cast<unsigned char>(h)));
          if (h >= 'a' && h <= 'f') return h - 'a' + 10;
          return -1;
        };
        if (pos_ + 2 > s_.size() || hex(s_[pos_]) < 0 || hex(s_[pos_ + 1]) < 0)
          fail("\\x needs two hex digits");
        byte = static_cast<std::uint8_t>(hex(s_[pos_]) * 16 + hex(s_[pos_ + 1]));
        pos_ += 2;
        return false;
      }
      default:
        break;
    }
    const auto uc = static_cast<unsigned char>(c);
    if (c >= '1' && c <= '9') fail("backreferences are not supported");
    if (c == 'k') fail("backreferences are not supported");
    if (in_class && (c == 'b' || c == 'B')) fail("\\b is not allowed inside a class");
    if (std::isalnum(uc)) fail(std::string("unsupported escape \\") + c);
    byte = uc;
    return false;
  }

  NodePtr parse_escape() {
    if (pos_ + 1 < s_.size()) {
      const char c = s_[pos_ + 1];
      if (c == 'b' || c == 'B' || c == 'A' || c == 'z') {
        pos_ += 2;
        Node n;
        n.kind = Node::Kind::Assert;
        n.assertion = c == 'b'   ? Assertion::WordBoundary
                      : c == 'B' ? Assertion::NotWordBoundary
                      : c == 'A' ? Assertion::TextBegin
                                 : Assertion::TextEnd;
        return make(std::move(n));
      }
    }
    ByteSet set;
    std::uint8_t byte = 0;
    if (parse_escape_member(set, byte, false)) return make_class(set);
    Node n;
    n.kind = Node::Kind::Byte;
    n.byte = fold(byte);
    return make(std::move(n));
  }

  NodePtr parse_class() {
    ++pos_;  // '['
    bool negate = false;
    if (!eof() && peek() == '^') {
      negate = true;
      ++pos_;
    }
    ByteSet set;
    bool first = true;
    for (;;) {
      if (eof()) fail("unterminated character class");
      if (peek() == ']' && !first) {
        ++pos_;
        break;
      }
      first = false;
      ByteSet member;
      std::uint8_t lo = 0;
      bool is_set = false;
      if (peek() == '\\') {
        is_set = parse_escape_member(member, lo, true);
      } else {
        lo = static_cast<std::uint8_t>(s_[pos_++]);
      }
      if (is_set) {
        set |= member;
        continue;
      }
      if (pos_ + 1 < s_.size() && peek() == '-' && s_[pos_ + 1] != ']') {
        ++pos_;
        std::uint8_t hi = 0;
        if (peek() == '\\') {
          if (parse_escape_member(member, hi, true)) fail("class escape cannot end a range");
        } else {
          hi = static_cast<std::uint8_t>(s_[pos_++]);
        }
        if (hi < lo) fail("invalid class range");
        for (int b = lo; b <= hi; ++b) set.set(b);
      } else {
        set.set(lo);
      }
    }
    fold_case(set);
    if (negate) set = ~set;
    if (set.none()) fail("empty character class");
    return make_class(set);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

bool nullable(const Node& n) {
  switch (n.kind) {
    case Node::Kind::Empty:
    case Node::Kind::Assert:
      return true;
    case Node::Kind::Byte:
    case Node::Kind::Class:
    case Node::Kind::Any:
    case Node::Kind::Placeholder:
      return false;
    case Node::Kind::Concat:
      return std::all_of(n.kids.begin(), n.kids.end(), [](const NodePtr& k) { return nullable(*k); });
    case Node::Kind::Alt:
      return std::any_of(n.kids.begin(), n.kids.end(), [](const NodePtr& k) { return nullable(*k); });
    case Node::Kind::Repeat:
      return n.min == 0 || nullable(*n.kids.front());
  }
  return false;
}

constexpr std::size_t kMaxInsts = kMaxProgramBytes / sizeof(Program::Inst);

std::size_t sat_add(std::size_t a, std::size_t b) { return std::min(a + b, kMaxInsts + 1); }
std::size_t sat_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > (kMaxInsts + 1) / a) return kMaxInsts + 1;
  return std::min(a * b, kMaxInsts + 1);
}

// Instruction count of the compiled node (placeholders sized by entity length).
std::size_t program_size(const Node& n, std::size_t e1, std::size_t e2) {
  switch (n.kind) {
    case Node::Kind::Empty:
      return 0;
    case Node::Kind::Byte:
    case Node::Kind::Class:
    case Node::Kind::Any:
    case Node::Kind::Assert:
      return 1;
    case Node::Kind::Placeholder:
      return n.which == 1 ? e1 : e2;
    case Node::Kind::Concat: {
      std::size_t total = 0;
      for (const auto& k : n.kids) total = sat_add(total, program_size(*k, e1, e2));
      return total;
    }
    case Node::Kind::Alt: {
      std::size_t total = 0;
      for (const auto& k : n.kids) total = sat_add(total, sat_add(program_size(*k, e1, e2), 2));
      return total;
    }
    case Node::Kind::Repeat: {
      const std::size_t body = program_size(*n.kids.front(), e1, e2);
      std::size_t total = sat_mul(body, static_cast<std::size_t>(n.min));
      if (n.max == -1) return sat_add(total, sat_add(body, 2));
      return sat_add(total, sat_mul(sat_add(body, 1), static_cast<std::size_t>(n.max - n.min)));
    }
  }
  return 0;
}

class Compiler {
 public:
  Compiler(std::vector<Program::Inst>& code, std::vector<ByteSet>& classes, std::string_view e1,
           std::string_view e2)
      : code_(code), classes_(classes), e1_(e1), e2_(e2) {}

  void emit(const Node& n) {
    switch (n.kind) {
      case Node::Kind::Empty:
        return;
      case Node::Kind::Byte:
        code_.push_back({Op::Byte, Assertion::TextBegin, n.byte, 0, 0});
        return;
      case Node::Kind::Class:
        classes_.push_back(n.set);
        code_.push_back({Op::Class, Assertion::TextBegin, 0,
                         static_cast<std::uint32_t>(classes_.size() - 1), 0});
        return;
      case Node::Kind::Any:
        code_.push_back({Op::Any});
        return;
      case Node::Kind::Assert:
        code_.push_back({Op::Assert, n.assertion});
        return;
      case Node::Kind::Placeholder:
        for (char c : n.which == 1 ? e1_ : e2_)
          code_.push_back({Op::Byte, Assertion::TextBegin, fold(static_cast<std::uint8_t>(c))});
        return;
      case Node::Kind::Concat:
        for (const auto& k : n.kids) emit(*k);
        return;
      case Node::Kind::Alt: {
        std::vector<std::size_t> exits;
        for (std::size_t i = 0; i < n.kids.size(); ++i) {
          if (i + 1 < n.kids.size()) {
            const auto split = push({Op::Split});
            code_[split].x = here();
            emit(*n.kids[i]);
            exits.push_back(push({Op::Jmp}));
            code_[split].y = here();
          } else {
            emit(*n.kids[i]);
          }
        }
        for (auto e : exits) code_[e].x = here();
        return;
      }
      case Node::Kind::Repeat: {
        const Node& body = *n.kids.front();
        for (int i = 0; i < n.min; ++i) emit(body);
        if (n.max == -1) {
          const auto loop = push({Op::Split});
          const auto body_at = here();
          emit(body);
          code_[push({Op::Jmp})].x = static_cast<std::uint32_t>(loop);
          set_split(loop, body_at, here(), n.greedy);
          return;
        }
        std::vector<std::size_t> splits;
        for (int i = n.min; i < n.max; ++i) {
          splits.push_back(push({Op::Split}));
          code_[splits.back()].x = here();
          emit(body);
        }
        for (auto s : splits) set_split(s, code_[s].x, here(), n.greedy);
        return;
      }
    }
  }

  void finish() { code_.push_back({Op::Match}); }

 private:
  std::size_t push(Program::Inst inst) {
    code_.push_back(inst);
    return code_.size() - 1;
  }
  std::uint32_t here() const { return static_cast<std::uint32_t>(code_.size()); }
  void set_split(std::size_t at, std::uint32_t body, std::uint32_t skip, bool greedy) {
    code_[at].x = greedy ? body : skip;
    code_[at].y = greedy ? skip : body;
  }

  std::vector<Program::Inst>& code_;
  std::vector<ByteSet>& classes_;
  std::string_view e1_, e2_;
};

}  // namespace

Pattern Pattern::parse(std::string_view source) {
  Parser parser(source);
  Pattern p;
  p.source_ = std::string(source);
  p.root_ = parser.parse();
  p.placeholders_ = parser.placeholders;
  if (nullable(*p.root_)) throw RegexError("pattern matches the empty string");
  if (program_size(*p.root_, 1, 1) + 1 > kMaxInsts)
    throw RegexError("compiled pattern exceeds the 1 MB size limit");
  return p;
}

Program::Program(const Pattern& pattern, std::string_view entity1, std::string_view entity2) {
  if (!pattern.root_) throw RegexError("empty pattern object");
  if (program_size(*pattern.root_, entity1.size(), entity2.size()) + 1 > kMaxInsts)
    throw RegexError("compiled pattern exceeds the 1 MB size limit");
  Compiler c(code_, classes_, entity1, entity2);
  c.emit(*pattern.root_);
  c.finish();
}

bool Program::search(std::string_view text) const {
  const std::size_t n = code_.size();
  const std::size_t len = text.size();
  std::vector<std::uint32_t> clist, nlist, stack;
  clist.reserve(n);
  nlist.reserve(n);
  // mark[pc] == gen  <=>  pc is already on the list for position gen - 1.
  std::vector<std::size_t> mark(n, 0);

  auto byte_at = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  auto word_before = [&](std::size_t pos) { return pos > 0 && is_word(byte_at(pos - 1)); };
  auto word_after = [&](std::size_t pos) { return pos < len && is_word(byte_at(pos)); };

  // Follows epsilon edges from `pc` at text position `pos`; returns true on Match.
  auto add = [&](std::vector<std::uint32_t>& list, std::uint32_t start, std::size_t pos) {
    const std::size_t gen = pos + 1;
    stack.clear();
    stack.push_back(start);
    while (!stack.empty()) {
      const auto pc = stack.back();
      stack.pop_back();
      if (mark[pc] == gen) continue;
      mark[pc] = gen;
      const Inst& in = code_[pc];
      switch (in.op) {
        case Op::Match:
          return true;
        case Op::Jmp:
          stack.push_back(in.x);
          break;
        case Op::Split:
          stack.push_back(in.y);
          stack.push_back(in.x);
          break;
        case Op::Assert: {
          bool ok = false;
          switch (in.assertion) {
            case Assertion::TextBegin:
              ok = pos == 0;
              break;
            case Assertion::TextEnd:
              ok = pos == len;
              break;
            case Assertion::WordBoundary:
              ok = word_before(pos) != word_after(pos);
              break;
            case Assertion::NotWordBoundary:
              ok = word_before(pos) == word_after(pos);
              break;
          }
          if (ok) stack.push_back(pc + 1);
          break;
        }
        default:
          list.push_back(pc);
      }
    }
    return false;
  };

  for (std::size_t pos = 0; pos <= len; ++pos) {
    if (add(clist, 0, pos)) return true;
    if (pos == len) break;
    const unsigned char c = byte_at(pos);
    nlist.clear();
    for (auto pc : clist) {
      const Inst& in = code_[pc];
      bool ok = false;
      switch (in.op) {
        case Op::Byte:
          ok = fold(c) == in.byte;
          break;
        case Op::Class:
          ok = classes_[in.x][c];
          break;
        case Op::Any:
          ok = c != '\n';
          break;
        default:
          break;
      }
      if (ok && add(nlist, pc + 1, pos + 1)) return true;
    }
    std::swap(clist, nlist);
  }
  return false;
}

std::string escape(std::string_view literal) {
  std::string out;
  out.reserve(literal.size() * 2);
  for (char c : literal) {
    const auto uc = static_cast<unsigned char>(c);
    if (uc < 0x80 && !std::isalnum(uc) && c != '_' && c != ' ') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace lfloop::regex
