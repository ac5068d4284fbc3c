#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"
#include "fivelab/rng.hpp"

namespace fivelab {

// Data points are stored as columns: `x` is n x N.
struct Dataset {
  std::string name;
  Matrix x;
  std::map<std::string, std::string> meta;

  Eigen::Index size() const { return x.cols(); }
  Eigen::Index dim() const { return x.rows(); }
};

// Points (u, v, u^2 + v^2) with u, v ~ N(0, 1), plus isotropic noise.
inline Dataset gen_paraboloid(Eigen::Index count = 10000, double noise_sd = 0.2, std::uint64_t seed = 0) {
  if (count < 1) throw DomainError("paraboloid dataset needs at least one point");
  if (!(noise_sd >= 0.0)) throw DomainError("noise_sd must be non-negative");
  Rng rng(stream_seed(seed, {0x9a7aULL}));
  std::normal_distribution<double> n01(0.0, 1.0);
  Dataset ds{"paraboloid", Matrix(3, count), {}};
  for (Eigen::Index i = 0; i < count; ++i) {
    const double u = n01(rng);
    const double v = n01(rng);
    ds.x(0, i) = u;
    ds.x(1, i) = v;
    ds.x(2, i) = u * u + v * v;
  }
  if (noise_sd > 0.0) ds.x += noise_sd * standard_normal(3, count, rng);
  ds.meta = {{"n", "3"}, {"N", std::to_string(count)}, {"noise_sd", std::to_string(noise_sd)}};
  return ds;
}

// Rows ~ N(0, cov) through the Cholesky factor.
inline Dataset gen_linear_gaussian(Eigen::Index count, const Matrix& cov, std::uint64_t seed = 0) {
  if (count < 1) throw DomainError("linear-Gaussian dataset needs at least one point");
  if (!is_symmetric(cov)) throw DomainError("covariance is not symmetric");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw DomainError("covariance is not positive definite");
  Rng rng(stream_seed(seed, {0x11aeULL}));
  Dataset ds{"linear_gauss", Matrix(llt.matrixL()) * standard_normal(cov.rows(), count, rng), {}};
  ds.meta = {{"n", std::to_string(cov.rows())}, {"N", std::to_string(count)}};
  return ds;
}

// ---- IDX (big-endian) ----

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size())
    throw ParseError(path + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& buf, const std::string& path) {
  const std::uint32_t magic = detail::read_be32(buf, 0, path);
  if (magic != kIdxImagesMagic) {
    std::ostringstream msg;
    msg << path << ": unexpected magic 0x" << std::hex << magic << " at byte offset 0 (expected 0x803)";
    throw ParseError(msg.str());
  }
  IdxImages img;
  img.count = detail::read_be32(buf, 4, path);
  img.rows = detail::read_be32(buf, 8, path);
  img.cols = detail::read_be32(buf, 12, path);
  const std::uint64_t payload = std::uint64_t{img.count} * img.rows * img.cols;
  if (buf.size() - 16 != payload)
    throw ParseError(path + ": declared dims need " + std::to_string(payload) + " payload bytes from byte offset 16, found " +
                     std::to_string(buf.size() - 16));
  img.pixels.assign(buf.begin() + 16, buf.end());
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<unsigned char>& buf, const std::string& path) {
  const std::uint32_t magic = detail::read_be32(buf, 0, path);
  if (magic != kIdxLabelsMagic) {
    std::ostringstream msg;
    msg << path << ": unexpected magic 0x" << std::hex << magic << " at byte offset 0 (expected 0x801)";
    throw ParseError(msg.str());
  }
  const std::uint32_t count = detail::read_be32(buf, 4, path);
  if (buf.size() - 8 != count)
    throw ParseError(path + ": declared " + std::to_string(count) + " labels from byte offset 8, found " +
                     std::to_string(buf.size() - 8));
  return {buf.begin() + 8, buf.end()};
}

// Flattened images scaled to [0, 1]. Labels are checked for consistency and otherwise unused.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path = "") {
  const IdxImages img = parse_idx_images(detail::read_file(images_path), images_path);
  const Eigen::Index n = static_cast<Eigen::Index>(img.rows) * img.cols;
  Dataset ds{"mnist", Matrix(n, img.count), {}};
  for (std::uint32_t i = 0; i < img.count; ++i)
    for (Eigen::Index p = 0; p < n; ++p) ds.x(p, i) = img.pixels[static_cast<std::size_t>(i) * n + p] / 255.0;
  if (!labels_path.empty()) {
    const auto labels = parse_idx_labels(detail::read_file(labels_path), labels_path);
    if (labels.size() != img.count) throw ParseError(labels_path + ": label count differs from image count");
  }
  ds.meta = {{"n", std::to_string(n)}, {"N", std::to_string(img.count)}, {"source", images_path}};
  return ds;
}

inline void write_idx_images(std::ostream& os, std::uint32_t rows, std::uint32_t cols,
                             const std::vector<unsigned char>& pixels) {
  const std::uint32_t count = static_cast<std::uint32_t>(pixels.size() / (std::size_t{rows} * cols));
  detail::write_be32(os, kIdxImagesMagic);
  detail::write_be32(os, count);
  detail::write_be32(os, rows);
  detail::write_be32(os, cols);
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

// ---- little-endian float64 blobs (checkpoint payload format) ----

inline void write_f64_le(std::ostream& os, const double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline std::vector<double> read_f64_le(std::istream& is, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
      throw ParseError("float64 blob truncated at value " + std::to_string(i));
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[k]} << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

// ---- splits and batches ----

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

inline Split make_split(std::size_t count, std::size_t val_size, std::size_t test_size, std::uint64_t seed) {
  if (val_size + test_size >= count)
    throw ConfigError("validation plus test size (" + std::to_string(val_size + test_size) +
                      ") must be smaller than the dataset (" + std::to_string(count) + ")");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_stream(seed, {0x5b117ULL});
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(val_size));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(val_size),
                idx.begin() + static_cast<std::ptrdiff_t>(val_size + test_size));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(val_size + test_size), idx.end());
  return s;
}

// Fresh shuffle of the training indices per epoch, derived from (seed, epoch).
class BatchSchedule {
 public:
  BatchSchedule(std::vector<std::size_t> train, std::size_t batch_size, std::uint64_t seed)
      : train_(std::move(train)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ < 1) throw ConfigError("batch size must be positive");
  }

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t e) const {
    std::vector<std::size_t> order = train_;
    Rng rng = make_stream(seed_, {0xe90cULL, e});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += batch_size_)
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size_)));
    return batches;
  }

  std::size_t batch_size() const { return batch_size_; }
  const std::vector<std::size_t>& train() const { return train_; }

 private:
  std::vector<std::size_t> train_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

inline std::pair<Split, BatchSchedule> split_and_batch(const Dataset& ds, std::size_t val_size, std::size_t batch_size,
                                                       std::uint64_t seed, std::size_t test_size = 0) {
  Split s = make_split(static_cast<std::size_t>(ds.size()), val_size, test_size, seed);
  BatchSchedule b(s.train, batch_size, seed);
  return {std::move(s), std::move(b)};
}

inline Matrix gather_columns(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

}  // namespace fivelab
