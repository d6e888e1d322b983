#pragma once

// Reader for the subset of TOML used by experiment configs: [table] / [a.b] headers,
// bare or quoted keys, and string, integer, float, boolean and array values (arrays may
// span lines). The result is a JSON object tree.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/errors.hpp"

namespace svct::harness::toml {

namespace detail {

class Parser {
 public:
  explicit Parser(std::string text) : s_(std::move(text)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_space_and_comments(true);
      if (eof()) break;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        const std::string key = parse_key();
        skip_inline_space();
        expect('=');
        skip_inline_space();
        nlohmann::json value = parse_value();
        if (table->contains(key)) fail("duplicate key '" + key + "'");
        (*table)[key] = std::move(value);
      }
      end_of_line();
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    get();
  }

  void skip_inline_space() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) get();
  }

  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') get();
    }
  }

  void skip_space_and_comments(bool newlines) {
    while (!eof()) {
      skip_inline_space();
      skip_comment();
      if (newlines && (peek() == '\n' || peek() == '\r')) {
        get();
        continue;
      }
      break;
    }
  }

  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (peek() == '\r') get();
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  nlohmann::json& open_table(nlohmann::json& root) {
    expect('[');
    if (peek() == '[') fail("arrays of tables are not supported");
    nlohmann::json* node = &root;
    while (true) {
      skip_inline_space();
      const std::string part = parse_key();
      skip_inline_space();
      if (node->contains(part) && !(*node)[part].is_object()) fail("table '" + part + "' redefines a value");
      if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
      node = &(*node)[part];
      if (peek() == '.') {
        get();
        continue;
      }
      break;
    }
    expect(']');
    if (std::find(opened_.begin(), opened_.end(), node) != opened_.end()) fail("table defined twice");
    opened_.push_back(node);
    return *node;
  }

  std::string parse_key() {
    if (peek() == '"') return parse_string();
    std::string key;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) key += get();
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = get();
      if (c == '"') break;
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = get();
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    std::string word;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' &&
           peek() != '#') {
      word += get();
    }
    if (word.empty()) fail("expected a value");
    if (word == "true") return true;
    if (word == "false") return false;
    return parse_number(word);
  }

  nlohmann::json parse_number(std::string word) {
    std::string clean;
    for (std::size_t i = 0; i < word.size(); ++i) {
      if (word[i] == '_') {
        if (i == 0 || i + 1 == word.size() || !std::isdigit(static_cast<unsigned char>(word[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(word[i + 1]))) {
          fail("misplaced underscore in '" + word + "'");
        }
        continue;
      }
      clean += word[i];
    }
    const std::string body = (!clean.empty() && (clean[0] == '+' || clean[0] == '-')) ? clean.substr(1) : clean;
    const bool negative = !clean.empty() && clean[0] == '-';
    if (body == "inf") return negative ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    for (char ch : body) {
      if (!(std::isdigit(static_cast<unsigned char>(ch)) || ch == '.' || ch == 'e' || ch == 'E' || ch == '+' || ch == '-')) {
        fail("invalid value '" + word + "'");
      }
    }
    std::size_t used = 0;
    try {
      if (is_float) {
        const double v = std::stod(clean, &used);
        if (used != clean.size()) fail("invalid float '" + word + "'");
        return v;
      }
      const long long v = std::stoll(clean, &used);
      if (used != clean.size()) fail("invalid integer '" + word + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("invalid number '" + word + "'");
    }
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_space_and_comments(true);
      if (peek() == ']') {
        get();
        return arr;
      }
      arr.push_back(parse_value());
      skip_space_and_comments(true);
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() == ']') {
        get();
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  std::string s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::vector<const nlohmann::json*> opened_;
};

}  // namespace detail

inline nlohmann::json parse(const std::string& text) { return detail::Parser(text).parse(); }

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace svct::harness::toml
