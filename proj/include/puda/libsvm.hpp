#pragma once

#include "puda/costs.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>

namespace puda {

/// Raw label values mapped to +1 and -1 respectively.
struct LabelMap {
  double positive = 1.0;
  double negative = -1.0;
};

namespace detail {

inline bool parse_double(std::string_view tok, double& out) {
  std::string buf(tok);  // strtod accepts forms like "+1" that from_chars rejects
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && !buf.empty();
}

}  // namespace detail

/// Reads `label idx:val idx:val ...` lines with 1-based indices. Blank lines
/// and `#` comments are skipped. M is the largest index seen unless `dimension`
/// is given, in which case larger indices are an error.
inline Dataset read_libsvm(std::istream& in, bool normalize, LabelMap labels = {},
                           std::optional<int> dimension = std::nullopt) {
  Dataset d;
  std::string line;
  long lineno = 0;
  int max_index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string_view rest(line);
    auto skip_ws = [&] {
      while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t' || rest.front() == '\r')) rest.remove_prefix(1);
    };
    auto next_token = [&] {
      skip_ws();
      std::size_t n = 0;
      while (n < rest.size() && rest[n] != ' ' && rest[n] != '\t' && rest[n] != '\r') ++n;
      auto tok = rest.substr(0, n);
      rest.remove_prefix(n);
      return tok;
    };
    auto fail = [&](const std::string& why) {
      return ParseError("libsvm line " + std::to_string(lineno) + ": " + why, lineno);
    };

    auto label_tok = next_token();
    if (label_tok.empty()) continue;
    double raw = 0.0;
    if (!detail::parse_double(label_tok, raw)) throw fail("bad label '" + std::string(label_tok) + "'");
    Sample s;
    if (raw == labels.positive) {
      s.y = 1;
    } else if (raw == labels.negative) {
      s.y = -1;
    } else {
      throw fail("unmapped label '" + std::string(label_tok) + "'");
    }

    int last = 0;
    for (auto tok = next_token(); !tok.empty(); tok = next_token()) {
      auto colon = tok.find(':');
      if (colon == std::string_view::npos) throw fail("expected idx:val, got '" + std::string(tok) + "'");
      int idx = 0;
      auto idx_part = tok.substr(0, colon);
      auto [ptr, ec] = std::from_chars(idx_part.data(), idx_part.data() + idx_part.size(), idx);
      if (ec != std::errc() || ptr != idx_part.data() + idx_part.size() || idx < 1) {
        throw fail("bad feature index '" + std::string(idx_part) + "'");
      }
      if (idx <= last) throw fail("feature indices must be strictly increasing");
      if (dimension && idx > *dimension) throw fail("feature index exceeds dimension");
      double val = 0.0;
      if (!detail::parse_double(tok.substr(colon + 1), val)) throw fail("bad feature value");
      last = idx;
      max_index = std::max(max_index, idx);
      s.x.index.push_back(idx - 1);
      s.x.value.push_back(val);
    }
    d.samples.push_back(std::move(s));
  }
  d.M = dimension ? *dimension : max_index;
  if (normalize) normalize_rows(d);
  return d;
}

inline Dataset read_libsvm(const std::string& path, bool normalize, LabelMap labels = {},
                           std::optional<int> dimension = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw InvalidDataError("cannot open libsvm file '" + path + "'");
  return read_libsvm(in, normalize, labels, dimension);
}

}  // namespace puda
