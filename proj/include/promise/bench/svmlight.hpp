#pragma once

// SVMLight / LIBSVM text format:
//   <label> <index>:<value> <index>:<value> ...
// with 1-based feature indices. '#' starts a comment; blank lines are skipped.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <fmt/format.h>
#include <fmt/os.h>

#include "promise/glm.hpp"

namespace promise::bench {

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline bool parse_index(std::string_view s, long long& out) {
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace detail

/// Parses SVMLight text. p is the largest index seen, or num_features when
/// given (which must cover every index).
inline Dataset parse_svmlight_stream(std::istream& in,
                                     std::optional<Index> num_features = std::nullopt) {
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> labels;
  long long max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream tokens(line);
    std::string tok;
    if (!(tokens >> tok)) continue;
    double label = 0.0;
    if (!detail::parse_double(tok, label) || !std::isfinite(label))
      throw ParseError("malformed label '" + tok + "'", lineno);
    const auto row = static_cast<Index>(labels.size());
    labels.push_back(label);
    std::set<long long> seen;
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw ParseError("malformed token '" + tok + "'", lineno);
      const std::string_view key(tok.data(), colon);
      const std::string_view val(tok.data() + colon + 1, tok.size() - colon - 1);
      if (key == "qid") continue;
      long long idx = 0;
      double value = 0.0;
      if (!detail::parse_index(key, idx) || idx < 1)
        throw ParseError("malformed feature index in '" + tok + "'", lineno);
      if (!detail::parse_double(val, value) || !std::isfinite(value))
        throw ParseError("malformed feature value in '" + tok + "'", lineno);
      if (!seen.insert(idx).second)
        throw ParseError("duplicate feature index " + std::to_string(idx), lineno);
      if (num_features && idx > *num_features)
        throw ParseError("feature index " + std::to_string(idx) + " exceeds num_features", lineno);
      max_index = std::max(max_index, idx);
      triplets.emplace_back(row, static_cast<Index>(idx - 1), value);
    }
  }
  if (labels.empty()) throw ParseError("no data rows", lineno);
  const Index p = num_features ? *num_features : static_cast<Index>(max_index);
  SparseMat A(static_cast<Index>(labels.size()), p);
  A.setFromTriplets(triplets.begin(), triplets.end());
  A.makeCompressed();
  Dataset ds{DesignMatrix(std::move(A)), Eigen::Map<const Vec>(labels.data(), Index(labels.size()))};
  return ds;
}

inline Dataset parse_svmlight(const std::string& path,
                              std::optional<Index> num_features = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return parse_svmlight_stream(in, num_features);
}

/// Writes ds in SVMLight format with round-trip precision. Explicit zeros in
/// a CSR matrix are written; dense zeros are not.
inline void write_svmlight(const std::string& path, const Dataset& ds) {
  auto out = fmt::output_file(path);
  for (Index i = 0; i < ds.n(); ++i) {
    out.print("{:.17g}", ds.labels(i));
    if (ds.A.is_sparse()) {
      for (SparseMat::InnerIterator it(ds.A.sparse(), i); it; ++it)
        out.print(" {}:{:.17g}", it.col() + 1, it.value());
    } else {
      const Mat& a = ds.A.dense();
      for (Index j = 0; j < a.cols(); ++j)
        if (a(i, j) != 0.0) out.print(" {}:{:.17g}", j + 1, a(i, j));
    }
    out.print("\n");
  }
}

}  // namespace promise::bench
