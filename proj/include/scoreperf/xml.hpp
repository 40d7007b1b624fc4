#pragma once

// Minimal non-validating XML reader, enough for uncompressed MusicXML:
// elements, attributes, character data, comments, CDATA, the five named
// entities and numeric character references. No namespaces, no DTD
// processing (DOCTYPE declarations are skipped). Parse errors carry the
// 1-based line number.

#include <string>
#include <string_view>
#include <vector>

#include "scoreperf/common.hpp"

namespace scoreperf::xml {

struct Node {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<Node> children;
  std::string text;  // concatenated character data of this element
  int line = 0;

  const std::string* attr(std::string_view key) const {
    for (const auto& [k, v] : attrs)
      if (k == key) return &v;
    return nullptr;
  }

  const Node* child(std::string_view name_) const {
    for (const auto& c : children)
      if (c.name == name_) return &c;
    return nullptr;
  }

  std::vector<const Node*> all(std::string_view name_) const {
    std::vector<const Node*> out;
    for (const auto& c : children)
      if (c.name == name_) out.push_back(&c);
    return out;
  }
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  Node parse_document() {
    skip_prolog();
    Node root = parse_element();
    skip_misc();
    if (pos_ != s_.size()) fail("trailing content after document element");
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("XML: " + msg, "line " + std::to_string(line_));
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }

  char get() {
    if (eof()) fail("unexpected end of input");
    char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  bool starts_with(std::string_view t) const { return s_.compare(pos_, t.size(), t) == 0; }

  void advance(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) get();
  }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r' || peek() == '\n')) get();
  }

  void skip_until(std::string_view terminator, const char* what) {
    while (!eof()) {
      if (starts_with(terminator)) {
        advance(terminator.size());
        return;
      }
      get();
    }
    fail(std::string("unterminated ") + what);
  }

  void skip_prolog() {
    // XML declaration, comments, PIs, DOCTYPE, whitespace.
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<!DOCTYPE")) {
        // Skip to the matching '>' (internal subsets use nested brackets).
        int depth = 0;
        while (!eof()) {
          char c = get();
          if (c == '[' || c == '<') ++depth;
          if (c == ']') --depth;
          if (c == '>') {
            if (depth <= 1) break;
            --depth;
          }
        }
      } else {
        return;
      }
    }
  }

  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else {
        return;
      }
    }
  }

  static bool name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '-' || c == '_' || c == '.' || c == ':';
  }

  std::string parse_name() {
    std::string out;
    while (!eof() && name_char(peek())) out.push_back(get());
    if (out.empty()) fail("expected a name");
    return out;
  }

  void append_entity(std::string& out) {
    // pos_ is at '&'
    get();
    std::string ent;
    while (!eof() && peek() != ';') {
      ent.push_back(get());
      if (ent.size() > 10) fail("malformed entity reference");
    }
    if (eof()) fail("unterminated entity reference");
    get();  // ';'
    if (ent == "amp") out.push_back('&');
    else if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (!ent.empty() && ent[0] == '#') {
      int code = 0;
      try {
        code = (ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X'))
                   ? std::stoi(ent.substr(2), nullptr, 16)
                   : std::stoi(ent.substr(1));
      } catch (...) {
        fail("malformed character reference");
      }
      if (code <= 0 || code > 0x10FFFF) fail("character reference out of range");
      // UTF-8 encode.
      if (code < 0x80) {
        out.push_back(static_cast<char>(code));
      } else if (code < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (code >> 6)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
      } else if (code < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (code >> 12)));
        out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
      } else {
        out.push_back(static_cast<char>(0xF0 | (code >> 18)));
        out.push_back(static_cast<char>(0x80 | ((code >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
      }
    } else {
      fail("unknown entity &" + ent + ";");
    }
  }

  std::string parse_attr_value() {
    skip_ws();
    if (eof() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
    char quote = get();
    std::string out;
    for (;;) {
      if (eof()) fail("unterminated attribute value");
      if (peek() == quote) {
        get();
        return out;
      }
      if (peek() == '&') append_entity(out);
      else out.push_back(get());
    }
  }

  Node parse_element() {
    if (eof() || peek() != '<') fail("expected element");
    Node node;
    node.line = line_;
    get();  // '<'
    node.name = parse_name();
    // Attributes.
    for (;;) {
      skip_ws();
      if (eof()) fail("unterminated start tag <" + node.name + ">");
      if (peek() == '/') {
        get();
        if (eof() || get() != '>') fail("malformed empty-element tag");
        return node;
      }
      if (peek() == '>') {
        get();
        break;
      }
      std::string key = parse_name();
      skip_ws();
      if (eof() || get() != '=') fail("expected '=' in attribute");
      node.attrs.emplace_back(std::move(key), parse_attr_value());
    }
    // Content.
    for (;;) {
      if (eof()) fail("unterminated element <" + node.name + ">");
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<![CDATA[")) {
        advance(9);
        while (!eof() && !starts_with("]]>")) node.text.push_back(get());
        if (eof()) fail("unterminated CDATA section");
        advance(3);
      } else if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("</")) {
        advance(2);
        std::string close = parse_name();
        if (close != node.name)
          fail("mismatched close tag </" + close + "> for <" + node.name + ">");
        skip_ws();
        if (eof() || get() != '>') fail("malformed close tag");
        return node;
      } else if (peek() == '<') {
        node.children.push_back(parse_element());
      } else if (peek() == '&') {
        append_entity(node.text);
      } else {
        node.text.push_back(get());
      }
    }
  }
};

}  // namespace detail

inline Node parse(std::string_view document) { return detail::Reader(document).parse_document(); }

inline std::string trimmed(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int int_text(const Node& n) {
  std::string t = trimmed(n.text);
  try {
    std::size_t used = 0;
    int v = std::stoi(t, &used);
    if (used != t.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw ParseError("XML: expected integer in <" + n.name + ">, got '" + t + "'",
                     "line " + std::to_string(n.line));
  }
}

}  // namespace scoreperf::xml
