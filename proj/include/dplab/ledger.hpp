#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dplab/error.hpp"

namespace dplab {

inline constexpr const char* kLedgerHeader =
    "step,alpha_star,rdp_eps,epsilon,delta,critic_loss,gen_loss,is_mean,is_std,wall_s";

/// One evaluation point of a run. Non-finite values are written as inf / nan;
/// alpha_star is 0 when no order applies (no noise).
struct LedgerRow {
  std::uint64_t step = 0;
  int alpha_star = 0;
  double rdp_eps = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;
  double critic_loss = NAN;
  double gen_loss = NAN;
  double is_mean = NAN;
  double is_std = NAN;
  double wall_s = 0.0;
};

/// %.17g, which reads back to the identical double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParameterError("not a number: '" + s + "'");
  return v;
}

inline std::string format_row(const LedgerRow& r) {
  std::string s = std::to_string(r.step) + "," + std::to_string(r.alpha_star);
  for (double v : {r.rdp_eps, r.epsilon, r.delta, r.critic_loss, r.gen_loss, r.is_mean, r.is_std,
                   r.wall_s})
    s += "," + format_double(v);
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline LedgerRow parse_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 10) throw ParameterError("ledger row has " + std::to_string(f.size()) + " fields");
  LedgerRow r;
  r.step = std::stoull(f[0]);
  r.alpha_star = std::stoi(f[1]);
  double* dst[] = {&r.rdp_eps, &r.epsilon, &r.delta, &r.critic_loss, &r.gen_loss,
                   &r.is_mean, &r.is_std, &r.wall_s};
  for (int i = 0; i < 8; ++i) *dst[i] = parse_double(f[2 + i]);
  return r;
}

/// Appends rows to a CSV file, flushing after each so a failed run still
/// leaves every completed row on disk.
class LedgerWriter {
 public:
  explicit LedgerWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw Error("cannot open ledger " + path);
    out_ << kLedgerHeader << '\n';
    out_.flush();
  }

  void append(const LedgerRow& r) {
    out_ << format_row(r) << '\n';
    out_.flush();
    if (!out_) throw Error("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline std::vector<LedgerRow> read_ledger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open ledger " + path);
  std::string line;
  if (!std::getline(in, line) || line != kLedgerHeader)
    throw ParameterError(path + ": unexpected ledger header");
  std::vector<LedgerRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_row(line));
  return rows;
}

}  // namespace dplab
