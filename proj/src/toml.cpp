// Copyright 2026 The UniME Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "unime/toml.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "unime/errors.hpp"

namespace unime {
namespace toml {

Value Value::of_bool(bool v) {
  Value out;
  out.type = Type::kBool;
  out.b = v;
  return out;
}
Value Value::of_int(int64_t v) {
  Value out;
  out.type = Type::kInt;
  out.i = v;
  return out;
}
Value Value::of_float(double v) {
  Value out;
  out.type = Type::kFloat;
  out.f = v;
  return out;
}
Value Value::of_string(std::string v) {
  Value out;
  out.type = Type::kString;
  out.s = std::move(v);
  return out;
}
Value Value::of_array(std::vector<Value> v) {
  Value out;
  out.type = Type::kArray;
  out.arr = std::move(v);
  return out;
}

bool Value::as_bool(const std::string& key) const {
  check_config(type == Type::kBool, "config key '" + key + "' must be a bool");
  return b;
}
int64_t Value::as_int(const std::string& key) const {
  check_config(type == Type::kInt,
               "config key '" + key + "' must be an integer");
  return i;
}
double Value::as_float(const std::string& key) const {
  if (type == Type::kInt) return (double)i;
  check_config(type == Type::kFloat,
               "config key '" + key + "' must be a number");
  return f;
}
const std::string& Value::as_string(const std::string& key) const {
  check_config(type == Type::kString,
               "config key '" + key + "' must be a string");
  return s;
}
std::vector<int64_t> Value::as_int_array(const std::string& key,
                                         size_t n) const {
  check_config(type == Type::kArray && arr.size() == n,
               "config key '" + key + "' must be an array of " +
                   std::to_string(n) + " integers");
  std::vector<int64_t> out;
  for (const Value& v : arr) out.push_back(v.as_int(key));
  return out;
}
std::vector<double> Value::as_float_array(const std::string& key,
                                          size_t n) const {
  check_config(type == Type::kArray && arr.size() == n,
               "config key '" + key + "' must be an array of " +
                   std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const Value& v : arr) out.push_back(v.as_float(key));
  return out;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("config parse error at line " + std::to_string(line) +
                    ": " + what);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

std::string parse_string_body(const std::string& s, int line) {
  // s includes the surrounding quotes.
  if (s.size() < 2 || s.front() != '"' || s.back() != '"')
    fail(line, "malformed string value");
  std::string out;
  for (size_t i = 1; i + 1 < s.size(); ++i) {
    char c = s[i];
    if (c == '\\') {
      if (i + 2 >= s.size()) fail(line, "dangling escape in string");
      char e = s[++i];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail(line, "unsupported escape in string");
      }
    } else if (c == '"') {
      fail(line, "unescaped quote inside string");
    } else {
      out += c;
    }
  }
  return out;
}

Value parse_scalar(const std::string& raw, int line);

Value parse_array(const std::string& raw, int line) {
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
    fail(line, "malformed array value");
  std::vector<Value> items;
  std::string body = raw.substr(1, raw.size() - 2);
  std::string cur;
  bool in_str = false;
  int depth = 0;
  for (size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
    if (!in_str && c == '[') ++depth;
    if (!in_str && c == ']') --depth;
    if (c == ',' && !in_str && depth == 0) {
      items.push_back(parse_scalar(trim(cur), line));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) items.push_back(parse_scalar(trim(cur), line));
  return Value::of_array(std::move(items));
}

Value parse_scalar(const std::string& raw, int line) {
  if (raw.empty()) fail(line, "empty value");
  if (raw.front() == '"') return Value::of_string(parse_string_body(raw, line));
  if (raw.front() == '[') return parse_array(raw, line);
  if (raw == "true") return Value::of_bool(true);
  if (raw == "false") return Value::of_bool(false);
  const bool looks_float =
      raw.find_first_of(".eE") != std::string::npos &&
      raw.find_first_not_of("+-0123456789.eE") == std::string::npos;
  errno = 0;
  char* end = nullptr;
  if (!looks_float) {
    const long long v = std::strtoll(raw.c_str(), &end, 10);
    if (end && *end == '\0' && errno == 0) return Value::of_int((int64_t)v);
  }
  const double f = std::strtod(raw.c_str(), &end);
  if (end && *end == '\0' && errno == 0 && std::isfinite(f))
    return Value::of_float(f);
  fail(line, "cannot parse value '" + raw + "'");
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum((unsigned char)c) && c != '_' && c != '-') return false;
  return true;
}

}  // namespace

Table parse(const std::string& text) {
  Table table;
  std::istringstream in(text);
  std::string linebuf, section;
  int line = 0;
  while (std::getline(in, linebuf)) {
    ++line;
    std::string s = trim(strip_comment(linebuf));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!valid_key(section)) fail(line, "malformed section name");
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    if (!valid_key(key)) fail(line, "malformed key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) fail(line, "duplicate key '" + full + "'");
    table[full] = parse_scalar(trim(s.substr(eq + 1)), line);
  }
  return table;
}

Table parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

namespace {

std::string format_value(const Value& v) {
  switch (v.type) {
    case Value::Type::kBool:
      return v.b ? "true" : "false";
    case Value::Type::kInt:
      return std::to_string(v.i);
    case Value::Type::kFloat: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v.f);
      std::string s = buf;
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      return s;
    }
    case Value::Type::kString: {
      std::string out = "\"";
      for (char c : v.s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
          out += "\\n";
          continue;
        }
        out += c;
      }
      return out + "\"";
    }
    case Value::Type::kArray: {
      std::string out = "[";
      for (size_t i = 0; i < v.arr.size(); ++i) {
        if (i) out += ", ";
        out += format_value(v.arr[i]);
      }
      return out + "]";
    }
  }
  return "";
}

}  // namespace

std::string serialize(const Table& table) {
  std::string out;
  // std::map iterates keys sorted, so sections come out grouped.
  for (const auto& [key, value] : table)
    if (key.find('.') == std::string::npos)
      out += key + " = " + format_value(value) + "\n";
  std::string section;
  for (const auto& [key, value] : table) {
    const size_t dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + format_value(value) + "\n";
  }
  return out;
}

}  // namespace toml
}  // namespace unime
