#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "twogroups/error.hpp"
#include "twogroups/model.hpp"
#include "twogroups/moderation.hpp"

namespace twogroups::io {

inline constexpr const char* tool_version = "1.0.0";

// Shortest decimal that round-trips the double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// Four significant digits for human-readable tables.
inline std::string format_sig4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& what) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double x = 0.0;
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto res = std::from_chars(first, s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw parse_error("cannot parse " + what + " '" + s + "' as a number", line);
  return x;
}

inline long parse_long(const std::string& s, std::size_t line, const std::string& what) {
  long x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw parse_error("cannot parse " + what + " '" + s + "' as an integer", line);
  return x;
}

inline std::vector<double> parse_list(const std::string& s, std::size_t line, const std::string& what) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(parse_double(item, line, what));
  return out;
}

inline std::string join(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + format_double(xs[i]);
  return s;
}

// 64-bit FNV-1a, stable across platforms; used for config hashes in output headers.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

// Provenance written at the top of every output file.
struct RunHeader {
  std::string command;
  std::optional<std::uint64_t> seed;
  std::string config;  // canonical option text; hashed, not written

  std::string config_hash() const { return hex64(fnv1a(config)); }

  std::vector<std::string> lines() const {
    std::vector<std::string> out{"twogroups " + std::string(tool_version), "command: " + command};
    out.push_back("seed: " + (seed ? std::to_string(*seed) : std::string("none")));
    out.push_back("config_hash: " + config_hash());
    return out;
  }

  void write_comment_block(std::ostream& os, std::string_view prefix = "# ") const {
    for (const auto& l : lines()) os << prefix << l << '\n';
  }
};

// ---- panels ---------------------------------------------------------------

// CSV or TSV with header id,z[,variance|n]. Lines starting with '#' are comments.
inline ZPanel read_panel(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  char delim = ',';
  std::vector<Unit> units;
  enum class Extra { none, variance, n } extra = Extra::none;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (header.empty()) {
      delim = t.find('\t') != std::string::npos ? '\t' : ',';
      header = split(t, delim);
      if (header.size() < 2 || header[0] != "id" || header[1] != "z")
        throw parse_error("panel header must start with 'id,z'", lineno);
      if (header.size() == 3) {
        if (header[2] == "variance") extra = Extra::variance;
        else if (header[2] == "n") extra = Extra::n;
        else throw parse_error("third panel column must be 'variance' or 'n'", lineno);
      } else if (header.size() > 3) {
        throw parse_error("panel has too many columns", lineno);
      }
      continue;
    }
    const auto cells = split(t, delim);
    if (cells.size() != header.size())
      throw parse_error("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()),
                        lineno);
    Unit u;
    u.id = cells[0];
    if (u.id.empty()) throw parse_error("empty unit id", lineno);
    u.z = parse_double(cells[1], lineno, "z");
    if (!std::isfinite(u.z)) throw parse_error("z must be finite", lineno);
    if (extra == Extra::variance && !cells[2].empty()) {
      u.sampling_variance = parse_double(cells[2], lineno, "variance");
      if (!(*u.sampling_variance > 0.0) || !std::isfinite(*u.sampling_variance))
        throw parse_error("variance must be finite and > 0", lineno);
    }
    if (extra == Extra::n && !cells[2].empty()) {
      u.sample_size = parse_long(cells[2], lineno, "n");
      if (*u.sample_size <= 0) throw parse_error("n must be positive", lineno);
    }
    units.push_back(std::move(u));
  }
  if (header.empty()) throw parse_error("panel file has no header", lineno);
  try {
    return ZPanel(std::move(units));
  } catch (const invalid_input& e) {
    throw parse_error(e.what(), lineno);
  }
}

inline ZPanel read_panel_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open panel file '" + path + "'");
  return read_panel(in);
}

inline void write_panel(std::ostream& os, const ZPanel& panel, const RunHeader* header = nullptr) {
  if (header) header->write_comment_block(os);
  bool has_var = false, has_n = false;
  for (const auto& u : panel.units()) {
    has_var |= u.sampling_variance.has_value();
    has_n |= u.sample_size.has_value();
  }
  if (has_var && has_n) throw invalid_input("panel mixes variances and sample sizes; cannot write one column");
  os << "id,z" << (has_var ? ",variance" : has_n ? ",n" : "") << '\n';
  for (const auto& u : panel.units()) {
    os << u.id << ',' << format_double(u.z);
    if (has_var) os << ',' << (u.sampling_variance ? format_double(*u.sampling_variance) : "");
    if (has_n) os << ',' << (u.sample_size ? std::to_string(*u.sample_size) : "");
    os << '\n';
  }
}

// ---- model config ---------------------------------------------------------

// Flat "key = value" file; '#' starts a comment line.
inline std::map<std::string, std::pair<std::string, std::size_t>> read_key_values(std::istream& in) {
  std::map<std::string, std::pair<std::string, std::size_t>> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw parse_error("expected 'key = value'", lineno);
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw parse_error("empty key", lineno);
    if (kv.count(key)) throw parse_error("duplicate key '" + key + "'", lineno);
    kv[key] = {trim(std::string_view(t).substr(eq + 1)), lineno};
  }
  return kv;
}

inline const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys{"p0",        "null.kind", "null.delta0", "null.sigma0",
                                             "g.kind",    "g.mean",    "g.variance",  "g.support",
                                             "g.weights", "sampling_variance"};
  return keys;
}

// Builds a model from parsed keys; keys outside model_keys() are left for the caller.
inline TwoGroupsModel model_from_keys(const std::map<std::string, std::pair<std::string, std::size_t>>& kv) {
  auto get = [&](const std::string& key) -> const std::pair<std::string, std::size_t>* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto need = [&](const std::string& key) -> const std::pair<std::string, std::size_t>& {
    auto p = get(key);
    if (!p) throw invalid_input("model config is missing key '" + key + "'");
    return *p;
  };
  auto number = [&](const std::string& key) {
    const auto& [v, line] = need(key);
    return parse_double(v, line, key);
  };
  auto number_or = [&](const std::string& key, double fallback) { return get(key) ? number(key) : fallback; };

  const double p0 = number("p0");
  NullComponent null;
  const std::string kind = get("null.kind") ? get("null.kind")->first : "theoretical";
  try {
    if (kind == "theoretical") {
      null = NullComponent::theoretical();
      if (number_or("null.delta0", 0.0) != 0.0 || number_or("null.sigma0", 1.0) != 1.0)
        throw invalid_input("null.kind = theoretical requires null.delta0 = 0 and null.sigma0 = 1");
    } else if (kind == "empirical") {
      null = NullComponent::empirical(number("null.delta0"), number("null.sigma0"));
    } else {
      throw parse_error("null.kind must be 'theoretical' or 'empirical'", get("null.kind")->second);
    }
  } catch (const parse_error&) {
    throw;
  } catch (const invalid_input& e) {
    throw invalid_input(std::string("model config: ") + e.what());
  }

  const auto& gkind = need("g.kind");
  std::optional<MixingDistribution> g;
  if (gkind.first == "normal") {
    g = MixingDistribution::normal(number("g.mean"), number("g.variance"));
  } else if (gkind.first == "grid") {
    const auto& s = need("g.support");
    const auto& w = need("g.weights");
    g = MixingDistribution::grid(parse_list(s.first, s.second, "g.support"), parse_list(w.first, w.second, "g.weights"));
  } else {
    throw parse_error("g.kind must be 'normal' or 'grid'", gkind.second);
  }
  return TwoGroupsModel(p0, null, *g, number_or("sampling_variance", 1.0));
}

inline TwoGroupsModel read_model(std::istream& in) { return model_from_keys(read_key_values(in)); }

inline TwoGroupsModel read_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open model config '" + path + "'");
  return read_model(in);
}

inline void write_model(std::ostream& os, const TwoGroupsModel& m, const RunHeader* header = nullptr) {
  if (header) header->write_comment_block(os);
  os << "p0 = " << format_double(m.p0()) << '\n';
  os << "null.kind = " << (m.null().kind == NullKind::theoretical ? "theoretical" : "empirical") << '\n';
  os << "null.delta0 = " << format_double(m.null().delta0) << '\n';
  os << "null.sigma0 = " << format_double(m.null().sigma0) << '\n';
  if (auto n = m.g().as_normal()) {
    os << "g.kind = normal\n";
    os << "g.mean = " << format_double(n->mean) << '\n';
    os << "g.variance = " << format_double(n->variance) << '\n';
  } else {
    const auto& g = *m.g().as_grid();
    os << "g.kind = grid\n";
    os << "g.support = " << join(g.support) << '\n';
    os << "g.weights = " << join(g.weights) << '\n';
  }
  os << "sampling_variance = " << format_double(m.default_sampling_variance()) << '\n';
}

// ---- expression matrix ----------------------------------------------------

// TSV: first row holds a corner cell then one group label per column; each further row
// is a row id followed by the values.
inline ExpressionMatrix read_matrix(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> labels, ids;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    auto cells = split(line, '\t');
    if (labels.empty()) {
      if (cells.size() < 5) throw parse_error("matrix header needs a corner cell and at least 4 group labels", lineno);
      labels.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != labels.size() + 1)
      throw parse_error("expected " + std::to_string(labels.size() + 1) + " fields, found " + std::to_string(cells.size()),
                        lineno);
    ids.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty() || cells[c] == "NA" || cells[c] == "NaN" || cells[c] == "nan")
        throw parse_error("missing value in column " + std::to_string(c + 1) + " (missing data is not imputed)", lineno);
      const double x = parse_double(cells[c], lineno, "expression value");
      if (!std::isfinite(x)) throw parse_error("non-finite expression value", lineno);
      values.push_back(x);
    }
  }
  if (labels.empty()) throw parse_error("matrix file has no header", lineno);
  return ExpressionMatrix(std::move(ids), std::move(labels), std::move(values));
}

inline ExpressionMatrix read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_input("cannot open matrix file '" + path + "'");
  return read_matrix(in);
}

inline void write_matrix(std::ostream& os, const ExpressionMatrix& x) {
  os << "id";
  for (const auto& l : x.column_labels()) os << '\t' << l;
  os << '\n';
  for (std::size_t r = 0; r < x.rows(); ++r) {
    os << x.row_ids()[r];
    for (std::size_t c = 0; c < x.cols(); ++c) os << '\t' << format_double(x(r, c));
    os << '\n';
  }
}

}  // namespace twogroups::io
