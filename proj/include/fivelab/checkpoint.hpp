#pragma once

// Checkpoint: "key=value" header lines, a blank line, then every parameter as a
// little-endian float64 (encoder layers, then decoder; W row-major then b per layer).

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fivelab/data.hpp"
#include "fivelab/errors.hpp"
#include "fivelab/models.hpp"

namespace fivelab {

inline constexpr const char* kCheckpointMagic = "FIVELAB1";

// Hidden widths as stored in the header: the encoder's hidden layers.
inline std::vector<int> hidden_widths(const Model& m) {
  std::vector<int> h;
  const auto& layers = m.encoder.layers();
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) h.push_back(static_cast<int>(layers[k].weight.rows()));
  return h;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ParseError(what + ": bad integer '" + tok + "'");
    }
  }
  return out;
}

inline void write_checkpoint(std::ostream& os, const Model& m) {
  m.validate();
  const Vector enc = m.encoder.flatten();
  const Vector dec = m.decoder.flatten();
  char sigma_buf[64];
  std::snprintf(sigma_buf, sizeof sigma_buf, "%.17g", m.noise.log_sigma);
  os << "magic=" << kCheckpointMagic << "\n"
     << "model=" << to_string(m.kind) << "\n"
     << "d=" << m.latent_dim << "\n"
     << "n=" << m.data_dim() << "\n"
     << "hidden=" << join_ints(hidden_widths(m)) << "\n"
     << "activation=" << to_string(m.encoder.layers().front().activation) << "\n"
     << "log_sigma=" << sigma_buf << "\n"
     << "blob_len=" << 8 * (enc.size() + dec.size()) << "\n\n";
  write_f64_le(os, enc.data(), static_cast<std::size_t>(enc.size()));
  write_f64_le(os, dec.data(), static_cast<std::size_t>(dec.size()));
}

inline Model read_checkpoint(std::istream& is) {
  std::map<std::string, std::string> header;
  std::string line;
  while (std::getline(is, line) && !line.empty()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint header line without '=': " + line);
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) throw ParseError("checkpoint header lacks '" + key + "'");
    return it->second;
  };
  if (field("magic") != kCheckpointMagic) throw ParseError("checkpoint magic mismatch: '" + field("magic") + "'");
  Model m;
  try {
    const double log_sigma = std::stod(field("log_sigma"));
    m = make_model(parse_model_kind(field("model")), std::stol(field("n")), std::stol(field("d")),
                   parse_int_list(field("hidden"), "hidden"), parse_activation(field("activation")), log_sigma);
  } catch (const std::invalid_argument&) {
    throw ParseError("checkpoint header has a malformed number");
  } catch (const std::out_of_range&) {
    throw ParseError("checkpoint header number out of range");
  }
  const std::size_t count = static_cast<std::size_t>(m.encoder.parameter_count() + m.decoder.parameter_count());
  if (std::stoull(field("blob_len")) != 8 * count)
    throw ParseError("checkpoint blob_len " + field("blob_len") + " does not match architecture (" +
                     std::to_string(8 * count) + " bytes)");
  const std::vector<double> blob = read_f64_le(is, count);
  Vector flat(m.parameter_count());
  for (std::size_t k = 0; k < count; ++k) flat(static_cast<Eigen::Index>(k)) = blob[k];
  flat(flat.size() - 1) = m.noise.log_sigma;
  m.assign(flat);
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint has trailing bytes");
  return m;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path);
  write_checkpoint(os, m);
  if (!os) throw DataError("failed writing checkpoint " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace fivelab
