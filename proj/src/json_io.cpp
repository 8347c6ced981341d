#include "mixem/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "mixem/error.hpp"

namespace mixem {
namespace {

using nlohmann::json;

void put_double(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

template <class Range, class F>
void put_array(std::string& out, const Range& items, F&& each) {
  out += '[';
  bool first = true;
  for (const auto& item : items) {
    if (!first) out += ',';
    first = false;
    each(item);
  }
  out += ']';
}

void put_doubles(std::string& out, std::span<const double> values) {
  put_array(out, values, [&](double v) { put_double(out, v); });
}

void put_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (r) out += ',';
    put_doubles(out, m.row(r));
  }
  out += ']';
}

void put_params_fields(std::string& out, const MixtureParams& params) {
  out += "\"family\":\"" + family_name(params.family) + "\"";
  if (params.family.kind == ComponentFamily::Kind::Cfust) out += ",\"q\":" + std::to_string(params.family.q);
  out += ",\"pi\":";
  put_doubles(out, params.pi);
  out += ",\"mu\":";
  put_array(out, params.components, [&](const ComponentParams& c) { put_doubles(out, c.mu); });
  out += ",\"sigma\":";
  put_array(out, params.components, [&](const ComponentParams& c) { put_matrix(out, c.sigma); });
  if (params.family.kind == ComponentFamily::Kind::Cfust) {
    out += ",\"delta\":";
    put_array(out, params.components, [&](const ComponentParams& c) { put_matrix(out, c.delta); });
  }
  if (params.family.has_nu()) {
    out += ",\"nu\":";
    put_array(out, params.components, [&](const ComponentParams& c) { put_double(out, c.nu); });
  }
}

double get_double(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw Error(Errc::Parse, "expected a number");
  return j.get<double>();
}

std::vector<double> get_doubles(const json& j) {
  if (!j.is_array()) throw Error(Errc::Parse, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(get_double(v));
  return out;
}

Matrix get_matrix(const json& j, std::size_t cols_hint) {
  if (!j.is_array()) throw Error(Errc::Parse, "expected a matrix");
  Matrix m(j.size(), j.empty() ? cols_hint : j.front().size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = get_doubles(j[r]);
    if (row.size() != m.cols) throw Error(Errc::Parse, "ragged matrix");
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

const json& require(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw Error(Errc::Parse, std::string("missing key '") + key + "'");
  return *it;
}

MixtureParams params_from(const json& j) {
  if (!j.is_object()) throw Error(Errc::Parse, "expected a JSON object");
  MixtureParams params;
  const auto family = require(j, "family").get<std::string>();
  const unsigned q = j.contains("q") ? j["q"].get<unsigned>() : 1u;
  try {
    params.family = parse_family(family, q);
  } catch (const Error& e) {
    throw Error(Errc::Parse, e.what());
  }
  params.pi = get_doubles(require(j, "pi"));
  const auto& mu = require(j, "mu");
  const auto& sigma = require(j, "sigma");
  const std::size_t g = params.pi.size();
  if (!mu.is_array() || !sigma.is_array() || mu.size() != g || sigma.size() != g)
    throw Error(Errc::Parse, "component arrays disagree with pi");
  params.components.resize(g);
  for (std::size_t i = 0; i < g; ++i) {
    auto& c = params.components[i];
    c.mu = get_doubles(mu[i]);
    c.sigma = get_matrix(sigma[i], c.mu.size());
  }
  if (params.family.kind == ComponentFamily::Kind::Cfust) {
    const auto& delta = require(j, "delta");
    if (!delta.is_array() || delta.size() != g) throw Error(Errc::Parse, "delta disagrees with pi");
    for (std::size_t i = 0; i < g; ++i) params.components[i].delta = get_matrix(delta[i], params.family.q);
  }
  if (params.family.has_nu()) {
    const auto nu = get_doubles(require(j, "nu"));
    if (nu.size() != g) throw Error(Errc::Parse, "nu disagrees with pi");
    for (std::size_t i = 0; i < g; ++i) params.components[i].nu = nu[i];
  }
  return params;
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::Parse, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string to_json(const MixtureParams& params) {
  std::string out = "{";
  put_params_fields(out, params);
  out += "}\n";
  return out;
}

std::string to_json(const FitResult& result) {
  std::string out = "{";
  put_params_fields(out, result.params);
  out += ",\"loglik_trace\":";
  put_doubles(out, result.loglik_trace);
  out += ",\"labels\":";
  put_array(out, result.hard_labels, [&](int v) { out += std::to_string(v); });
  out += ",\"n_iter\":" + std::to_string(result.n_iter);
  out += std::string(",\"converged\":") + (result.converged ? "true" : "false");
  out += ",\"wall_time_s\":";
  put_double(out, result.wall_time_s);
  out += "}\n";
  return out;
}

MixtureParams params_from_json(std::string_view text) {
  try {
    return params_from(parse_text(text));
  } catch (const json::exception& e) {
    throw Error(Errc::Parse, std::string("schema violation: ") + e.what());
  }
}

FitResult fit_result_from_json(std::string_view text) {
  try {
    const json j = parse_text(text);
    FitResult result;
    result.params = params_from(j);
    result.loglik_trace = get_doubles(require(j, "loglik_trace"));
    result.hard_labels = require(j, "labels").get<std::vector<int>>();
    result.n_iter = require(j, "n_iter").get<std::size_t>();
    result.converged = require(j, "converged").get<bool>();
    result.wall_time_s = get_double(require(j, "wall_time_s"));
    return result;
  } catch (const json::exception& e) {
    throw Error(Errc::Parse, std::string("schema violation: ") + e.what());
  }
}

}  // namespace mixem
