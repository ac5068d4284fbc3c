#pragma once

// Flat key=value configuration, one key per line, '#' starts a comment.

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "fivelab/checkpoint.hpp"
#include "fivelab/data.hpp"
#include "fivelab/errors.hpp"
#include "fivelab/train.hpp"

namespace fivelab {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  is.imbue(std::locale::classic());
  T out{};
  if (!(is >> out) || !(is >> std::ws).eof()) throw ConfigError("key '" + key + "': bad number '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_number<double>(key, trim(tok)));
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_key_values(std::istream& is, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

inline ModelConfig config_from_map(const std::map<std::string, std::string>& kv) {
  using detail::parse_number;
  ModelConfig c;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters{
      {"model", [&](auto&, auto& v) { c.model = parse_model_kind(v); }},
      {"dataset", [&](auto&, auto& v) { c.dataset = v; }},
      {"data_size", [&](auto& k, auto& v) { c.data_size = parse_number<std::size_t>(k, v); }},
      {"data_noise", [&](auto& k, auto& v) { c.data_noise = parse_number<double>(k, v); }},
      {"data_cov_diag", [&](auto& k, auto& v) { c.data_cov_diag = detail::parse_double_list(k, v); }},
      {"data_path", [&](auto&, auto& v) { c.data_path = v; }},
      {"labels_path", [&](auto&, auto& v) { c.labels_path = v; }},
      {"latent_dim", [&](auto& k, auto& v) { c.latent_dim = parse_number<Eigen::Index>(k, v); }},
      {"hidden_dims", [&](auto& k, auto& v) { c.hidden_dims = parse_int_list(v, k); }},
      {"activation", [&](auto&, auto& v) { c.activation = parse_activation(v); }},
      {"lr", [&](auto& k, auto& v) { c.lr = parse_number<double>(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { c.weight_decay = parse_number<double>(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = parse_number<std::size_t>(k, v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"sigma_init", [&](auto& k, auto& v) { c.sigma_init = parse_number<double>(k, v); }},
      {"sigma_frozen", [&](auto& k, auto& v) { c.sigma_frozen = detail::parse_bool(k, v); }},
      {"val_size", [&](auto& k, auto& v) { c.val_size = parse_number<std::size_t>(k, v); }},
      {"test_size", [&](auto& k, auto& v) { c.test_size = parse_number<std::size_t>(k, v); }},
      {"k_importance", [&](auto& k, auto& v) { c.k_importance = parse_number<int>(k, v); }},
      {"probe_dist", [&](auto&, auto& v) { c.probe_dist = parse_probe_dist(v); }},
      {"init_gain", [&](auto& k, auto& v) { c.init_gain = parse_number<double>(k, v); }},
      {"serial", [&](auto& k, auto& v) { c.serial = detail::parse_bool(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(key, value);
    } catch (const ParseError& e) {
      throw ConfigError("key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

inline ModelConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  return config_from_map(parse_key_values(is, source));
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return parse_config(is, path);
}

// Canonical text form; parse_config(to_config_text(c)) reproduces c.
inline std::string to_config_text(const ModelConfig& c) {
  std::ostringstream os;
  std::string diag;
  for (std::size_t k = 0; k < c.data_cov_diag.size(); ++k) diag += (k ? "," : "") + detail::fmt(c.data_cov_diag[k]);
  os << "model=" << to_string(c.model) << "\n"
     << "dataset=" << c.dataset << "\n"
     << "data_size=" << c.data_size << "\n"
     << "data_noise=" << detail::fmt(c.data_noise) << "\n"
     << "data_cov_diag=" << diag << "\n";
  if (!c.data_path.empty()) os << "data_path=" << c.data_path << "\n";
  if (!c.labels_path.empty()) os << "labels_path=" << c.labels_path << "\n";
  os << "latent_dim=" << c.latent_dim << "\n"
     << "hidden_dims=" << join_ints(c.hidden_dims) << "\n"
     << "activation=" << to_string(c.activation) << "\n"
     << "lr=" << detail::fmt(c.lr) << "\n"
     << "weight_decay=" << detail::fmt(c.weight_decay) << "\n"
     << "batch_size=" << c.batch_size << "\n"
     << "epochs=" << c.epochs << "\n"
     << "seed=" << c.seed << "\n"
     << "sigma_init=" << detail::fmt(c.sigma_init) << "\n"
     << "sigma_frozen=" << (c.sigma_frozen ? "true" : "false") << "\n"
     << "val_size=" << c.val_size << "\n"
     << "test_size=" << c.test_size << "\n"
     << "k_importance=" << c.k_importance << "\n"
     << "probe_dist=" << to_string(c.probe_dist) << "\n"
     << "init_gain=" << detail::fmt(c.init_gain) << "\n"
     << "serial=" << (c.serial ? "true" : "false") << "\n";
  return os.str();
}

// Columns of a headerless or headed numeric CSV (one data point per row).
inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    bool numeric = true;
    while (std::getline(ss, tok, ',')) {
      std::istringstream ts(detail::trim(tok));
      ts.imbue(std::locale::classic());
      double v = 0.0;
      if (!(ts >> v) || !(ts >> std::ws).eof()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");
  Dataset ds{"csv", Matrix(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size())), {}};
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i)
      ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  if (!ds.x.allFinite()) throw DataError(path + ": non-finite entries");
  ds.meta = {{"source", path}};
  return ds;
}

inline Matrix diag_cov(const std::vector<double>& diag) {
  if (diag.empty()) throw ConfigError("covariance diagonal is empty");
  Vector d(static_cast<Eigen::Index>(diag.size()));
  for (std::size_t k = 0; k < diag.size(); ++k) d(static_cast<Eigen::Index>(k)) = diag[k];
  return d.asDiagonal();
}

inline Dataset load_dataset(const ModelConfig& c) {
  if (c.dataset == "paraboloid")
    return gen_paraboloid(static_cast<Eigen::Index>(c.data_size), c.data_noise, c.seed);
  if (c.dataset == "linear_gauss")
    return gen_linear_gaussian(static_cast<Eigen::Index>(c.data_size), diag_cov(c.data_cov_diag), c.seed);
  if (c.dataset == "mnist") {
    if (c.data_path.empty()) throw ConfigError("dataset=mnist needs data_path");
    return load_mnist_idx(c.data_path, c.labels_path);
  }
  if (c.dataset == "csv") {
    if (c.data_path.empty()) throw ConfigError("dataset=csv needs data_path");
    return load_csv_dataset(c.data_path);
  }
  throw ConfigError("unknown dataset '" + c.dataset + "'");
}

// Command-line dataset spec: paraboloid:N[:noise], linear_gauss:N:d1,d2,..., mnist:IMAGES, csv:PATH.
inline Dataset dataset_from_spec(const std::string& spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  ModelConfig c;
  c.dataset = kind;
  c.seed = seed;
  auto next = [](std::string& s) {
    const auto p = s.find(':');
    std::string head = s.substr(0, p);
    s = p == std::string::npos ? "" : s.substr(p + 1);
    return head;
  };
  std::string r = rest;
  if (kind == "paraboloid") {
    if (!r.empty()) c.data_size = detail::parse_number<std::size_t>("dataset", next(r));
    if (!r.empty()) c.data_noise = detail::parse_number<double>("dataset", next(r));
  } else if (kind == "linear_gauss") {
    c.data_size = detail::parse_number<std::size_t>("dataset", next(r));
    c.data_cov_diag = detail::parse_double_list("dataset", r);
  } else if (kind == "mnist" || kind == "csv") {
    c.data_path = rest;
  } else {
    throw ConfigError("unknown dataset spec '" + spec + "'");
  }
  if ((kind == "paraboloid" || kind == "linear_gauss") && c.data_size == 0) throw DataError("dataset is empty");
  return load_dataset(c);
}

}  // namespace fivelab
