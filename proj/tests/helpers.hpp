#pragma once

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

// Independent oracles and plumbing for the test suites. Everything here is
// deliberately written with different algorithms than the library (plain
// bisection, dense scans) so agreement is evidence, not tautology.

namespace testutil {

using nlohmann::json;

// mean_i b_i exp(-lambda (tau_i - tt)) (tau_i - tt), unstabilized: fine for
// the small instances tests use
inline double tilt_residual_raw(const std::vector<double>& tau,
                                const std::vector<double>& b, double tt,
                                double lambda) {
  double s = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double w = b.empty() ? 1.0 : b[i];
    s += w * std::exp(-lambda * (tau[i] - tt)) * (tau[i] - tt);
  }
  return s / static_cast<double>(tau.size());
}

// pure bisection on the tilt moment; no Newton, no stabilization
inline double lambda_by_bisection(const std::vector<double>& tau, double tt,
                                  const std::vector<double>& b = {},
                                  int iters = 200) {
  double lo = 0.0, hi = 0.0;
  const double r0 = tilt_residual_raw(tau, b, tt, 0.0);
  if (r0 == 0.0) return 0.0;
  double step = 1.0;
  if (r0 > 0.0) {
    // residual decreasing in lambda: root to the right
    hi = step;
    while (tilt_residual_raw(tau, b, tt, hi) > 0.0) {
      lo = hi;
      step *= 2.0;
      hi = step;
    }
  } else {
    hi = 0.0;
    lo = -step;
    while (tilt_residual_raw(tau, b, tt, lo) < 0.0) {
      hi = lo;
      step *= 2.0;
      lo = -step;
    }
  }
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (tilt_residual_raw(tau, b, tt, mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline double kl_to_base(const std::vector<double>& p,
                         const std::vector<double>& base) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    s += p[i] * std::log(p[i] / base[i]);
  }
  return s;
}

// Minimum KL(p || base) over the simplex subject to sum p_i tau_i = tt, for
// 2- or 3-point supports: with the mean constraint the feasible set is a
// point (n=2) or a segment (n=3); dense scan plus golden-section refinement.
inline double min_kl_on_simplex(const std::vector<double>& tau,
                                const std::vector<double>& base, double tt,
                                std::vector<double>* argmin = nullptr) {
  const std::size_t n = tau.size();
  if (n == 2) {
    //  p1 tau1 + (1-p1) tau2 = tt
    const double p1 = (tt - tau[1]) / (tau[0] - tau[1]);
    std::vector<double> p{p1, 1.0 - p1};
    if (argmin) *argmin = p;
    return kl_to_base(p, base);
  }
  // n = 3: parameterize by p1; p2 solves the mean constraint
  const double d2 = tau[1] - tau[2];
  auto point = [&](double p1) {
    const double p2 = ((tt - tau[2]) - p1 * (tau[0] - tau[2])) / d2;
    return std::vector<double>{p1, p2, 1.0 - p1 - p2};
  };
  auto feasible = [&](const std::vector<double>& p) {
    return p[0] >= 0.0 && p[1] >= 0.0 && p[2] >= 0.0;
  };
  auto value = [&](double p1) {
    const std::vector<double> p = point(p1);
    if (!feasible(p)) return std::numeric_limits<double>::infinity();
    return kl_to_base(p, base);
  };
  double best = std::numeric_limits<double>::infinity(), best_p1 = 0.0;
  const int grid = 200000;
  for (int i = 0; i <= grid; ++i) {
    const double p1 = static_cast<double>(i) / grid;
    const double v = value(p1);
    if (v < best) {
      best = v;
      best_p1 = p1;
    }
  }
  double lo = std::max(0.0, best_p1 - 2.0 / grid);
  double hi = std::min(1.0, best_p1 + 2.0 / grid);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  for (int i = 0; i < 200; ++i) {
    if (value(a) < value(b)) {
      hi = b;
      b = a;
      a = hi - gr * (hi - lo);
    } else {
      lo = a;
      a = b;
      b = lo + gr * (hi - lo);
    }
  }
  const double p1 = 0.5 * (lo + hi);
  if (argmin) *argmin = point(p1);
  return value(p1);
}

// ---- schema subset validator --------------------------------------------

inline bool type_matches(const json& value, const std::string& t) {
  if (t == "object") return value.is_object();
  if (t == "array") return value.is_array();
  if (t == "string") return value.is_string();
  if (t == "integer") return value.is_number_integer();
  if (t == "number") return value.is_number();
  if (t == "boolean") return value.is_boolean();
  if (t == "null") return value.is_null();
  return false;
}

// draft-07 subset: type, const, enum, required, properties, items,
// minItems/maxItems; enough for the committed report schema
inline bool validate_schema(const json& value, const json& schema,
                            std::string* error, const std::string& path = "$") {
  if (schema.contains("const") && value != schema["const"]) {
    *error = path + ": const mismatch";
    return false;
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& e : schema["enum"]) ok = ok || value == e;
    if (!ok) {
      *error = path + ": not in enum";
      return false;
    }
  }
  if (schema.contains("type")) {
    const json& t = schema["type"];
    bool ok = false;
    if (t.is_string())
      ok = type_matches(value, t.get<std::string>());
    else
      for (const auto& ti : t) ok = ok || type_matches(value, ti.get<std::string>());
    if (!ok) {
      *error = path + ": wrong type";
      return false;
    }
  }
  if (value.is_object()) {
    if (schema.contains("required"))
      for (const auto& r : schema["required"])
        if (!value.contains(r.get<std::string>())) {
          *error = path + ": missing required field " + r.get<std::string>();
          return false;
        }
    if (schema.contains("properties"))
      for (auto it = schema["properties"].begin();
           it != schema["properties"].end(); ++it)
        if (value.contains(it.key()))
          if (!validate_schema(value[it.key()], it.value(), error,
                               path + "." + it.key()))
            return false;
  }
  if (value.is_array()) {
    if (schema.contains("minItems") &&
        value.size() < schema["minItems"].get<std::size_t>()) {
      *error = path + ": too few items";
      return false;
    }
    if (schema.contains("maxItems") &&
        value.size() > schema["maxItems"].get<std::size_t>()) {
      *error = path + ": too many items";
      return false;
    }
    if (schema.contains("items"))
      for (std::size_t i = 0; i < value.size(); ++i)
        if (!validate_schema(value[i], schema["items"], error,
                             path + "[" + std::to_string(i) + "]"))
          return false;
  }
  return true;
}

// ---- process plumbing -----------------------------------------------------

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout (plus stderr if the command redirects)
};

inline CommandResult run_command(const std::string& cmd) {
  CommandResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return res;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0)
    res.output.append(buf.data(), got);
  const int status = pclose(pipe);
  res.exit_code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  return res;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(in)),
                std::istreambuf_iterator<char>());
  return s;
}

}  // namespace testutil
