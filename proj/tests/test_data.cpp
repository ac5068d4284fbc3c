#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fivelab/data.hpp"

using namespace fivelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fivelab_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string idx_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                       const std::vector<unsigned char>& pixels) {
  std::ostringstream os;
  detail::write_be32(os, magic);
  detail::write_be32(os, count);
  detail::write_be32(os, rows);
  detail::write_be32(os, cols);
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  return os.str();
}

}  // namespace

TEST(Paraboloid, NoiselessRowsLieOnTheSurface) {
  const Dataset ds = gen_paraboloid(500, 0.0, 3);
  ASSERT_EQ(ds.dim(), 3);
  ASSERT_EQ(ds.size(), 500);
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    EXPECT_EQ(ds.x(2, i), ds.x(0, i) * ds.x(0, i) + ds.x(1, i) * ds.x(1, i));
}

TEST(Paraboloid, DefaultsAndHeightMoment) {
  const Dataset ds = gen_paraboloid();
  EXPECT_EQ(ds.size(), 10000);
  EXPECT_EQ(ds.meta.at("noise_sd"), std::to_string(0.2));
  // Height is chi-squared with 2 dof plus N(0, 0.04): mean 2, variance 4.04.
  const double mean = ds.x.row(2).mean();
  EXPECT_LT(std::abs(mean - 2.0), 3 * std::sqrt(4.04 / 10000));
}

TEST(Paraboloid, NoiseLevelMatches) {
  // First coordinate is u + noise, variance 1 + 0.04.
  const Dataset ds = gen_paraboloid(100000, 0.2, 1);
  const double var = (ds.x.row(0).array() - ds.x.row(0).mean()).square().mean();
  EXPECT_LT(std::abs(var - 1.04), 3 * std::sqrt(2 * 1.04 * 1.04 / 100000));
}

TEST(Paraboloid, SeedReproducible) {
  EXPECT_EQ(gen_paraboloid(100, 0.2, 7).x, gen_paraboloid(100, 0.2, 7).x);
  EXPECT_NE(gen_paraboloid(100, 0.2, 7).x, gen_paraboloid(100, 0.2, 8).x);
  EXPECT_THROW(gen_paraboloid(0), DomainError);
  EXPECT_THROW(gen_paraboloid(10, -0.1), DomainError);
}

TEST(LinearGaussian, MomentsMatchCovariance) {
  const Vector diag{{4.0, 1.0, 0.25}};
  const int count = 100000;
  const Dataset ds = gen_linear_gaussian(count, diag.asDiagonal(), 2);
  for (int i = 0; i < 3; ++i) {
    const double mean = ds.x.row(i).mean();
    const double var = ds.x.row(i).array().square().mean() - mean * mean;
    EXPECT_LT(std::abs(mean), 3 * std::sqrt(diag(i) / count));
    EXPECT_LT(std::abs(var - diag(i)), 3 * std::sqrt(2 * diag(i) * diag(i) / count));
  }
}

TEST(LinearGaussian, IdentityCovariance) {
  const int count = 50000;
  const Dataset ds = gen_linear_gaussian(count, Matrix::Identity(2, 2), 3);
  const Matrix cov = ds.x * ds.x.transpose() / count;
  EXPECT_LT((cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 4 * std::sqrt(2.0 / count));
}

TEST(LinearGaussian, RejectsNonSpd) {
  EXPECT_THROW(gen_linear_gaussian(10, Matrix(Eigen::Vector2d(1.0, -1.0).asDiagonal())), DomainError);
  Matrix asym = Matrix::Identity(2, 2);
  asym(0, 1) = 0.5;
  EXPECT_THROW(gen_linear_gaussian(10, asym), DomainError);
}

TEST(Idx, TwoImageFixture) {
  std::vector<unsigned char> pixels(2 * 784);
  for (std::size_t k = 0; k < pixels.size(); ++k) pixels[k] = static_cast<unsigned char>(k % 256);
  const fs::path dir = scratch_dir("two");
  {
    std::ofstream(dir / "images", std::ios::binary) << idx_images(kIdxImagesMagic, 2, 28, 28, pixels);
    std::ofstream labels(dir / "labels", std::ios::binary);
    detail::write_be32(labels, kIdxLabelsMagic);
    detail::write_be32(labels, 2);
    labels.put(3).put(7);
  }
  const Dataset ds = load_mnist_idx((dir / "images").string(), (dir / "labels").string());
  EXPECT_EQ(ds.size(), 2);
  EXPECT_EQ(ds.dim(), 784);
  EXPECT_DOUBLE_EQ(ds.x(255, 0), 1.0);
  EXPECT_DOUBLE_EQ(ds.x(0, 1), (784 % 256) / 255.0);
  EXPECT_GE(ds.x.minCoeff(), 0.0);
  EXPECT_LE(ds.x.maxCoeff(), 1.0);
}

TEST(Idx, WriterRoundTrip) {
  const std::vector<unsigned char> pixels{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110};
  std::ostringstream os;
  write_idx_images(os, 2, 3, pixels);
  const IdxImages img = parse_idx_images(bytes_of(os.str()), "mem");
  EXPECT_EQ(img.count, 2u);
  EXPECT_EQ(img.rows, 2u);
  EXPECT_EQ(img.cols, 3u);
  EXPECT_EQ(img.pixels, pixels);
}

TEST(Idx, BadMagicNamesOffset) {
  const std::string buf = idx_images(0x00000802, 1, 2, 2, {0, 0, 0, 0});
  try {
    parse_idx_images(bytes_of(buf), "f");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unexpected magic"), std::string::npos);
    EXPECT_NE(msg.find("byte offset 0"), std::string::npos);
  }
}

TEST(Idx, AllZeroPayload) {
  const fs::path dir = scratch_dir("zeros");
  std::ofstream(dir / "images", std::ios::binary) << idx_images(kIdxImagesMagic, 3, 4, 4, std::vector<unsigned char>(48, 0));
  const Dataset ds = load_mnist_idx((dir / "images").string());
  EXPECT_EQ(ds.size(), 3);
  EXPECT_EQ(ds.dim(), 16);
  EXPECT_TRUE(ds.x.isZero(0.0));
}

TEST(Idx, DeclaredDimsMustMatchPayload) {
  for (std::size_t len : {0u, 3u, 5u, 100u}) {
    const std::string buf = idx_images(kIdxImagesMagic, 1, 2, 2, std::vector<unsigned char>(len, 1));
    try {
      parse_idx_images(bytes_of(buf), "f");
      FAIL() << "expected ParseError for payload " << len;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("byte offset 16"), std::string::npos);
    }
  }
  EXPECT_THROW(parse_idx_images(bytes_of(std::string("\0\0\x08", 3)), "f"), ParseError);
}

TEST(Idx, LabelsChecked) {
  std::ostringstream os;
  detail::write_be32(os, kIdxLabelsMagic);
  detail::write_be32(os, 3);
  os.put(1).put(2);
  EXPECT_THROW(parse_idx_labels(bytes_of(os.str()), "l"), ParseError);
  EXPECT_THROW(parse_idx_labels(bytes_of(idx_images(kIdxImagesMagic, 0, 0, 0, {})), "l"), ParseError);
  EXPECT_THROW(load_mnist_idx("/nonexistent/images"), DataError);
}

TEST(Split, ZeroValidationKeepsEverythingInTrain) {
  const Split s = make_split(10, 0, 0, 1);
  EXPECT_TRUE(s.val.empty());
  EXPECT_EQ(s.train.size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(s.train.begin(), s.train.end()).size(), 10u);
}

TEST(Split, PartitionIsDisjointAndComplete) {
  const Split s = make_split(100, 20, 15, 4);
  EXPECT_EQ(s.val.size(), 20u);
  EXPECT_EQ(s.test.size(), 15u);
  EXPECT_EQ(s.train.size(), 65u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(*all.rbegin(), 99u);
  EXPECT_THROW(make_split(10, 10, 0, 0), ConfigError);
  EXPECT_THROW(make_split(10, 6, 4, 0), ConfigError);
}

TEST(Batches, SizesForTenPointsBatchThree) {
  const Dataset ds = gen_paraboloid(10, 0.2, 0);
  const auto [split, schedule] = split_and_batch(ds, 0, 3, 5);
  const auto batches = schedule.epoch(0);
  ASSERT_EQ(batches.size(), 4u);
  EXPECT_EQ(batches[0].size(), 3u);
  EXPECT_EQ(batches[1].size(), 3u);
  EXPECT_EQ(batches[2].size(), 3u);
  EXPECT_EQ(batches[3].size(), 1u);
  EXPECT_THROW(BatchSchedule({1, 2}, 0, 0), ConfigError);
}

TEST(Batches, DeterministicPerSeedAndEpoch) {
  const Dataset ds = gen_paraboloid(50, 0.2, 0);
  const auto a = split_and_batch(ds, 10, 7, 9);
  const auto b = split_and_batch(ds, 10, 7, 9);
  EXPECT_EQ(a.first.train, b.first.train);
  EXPECT_EQ(a.first.val, b.first.val);
  EXPECT_EQ(a.second.epoch(3), b.second.epoch(3));
  EXPECT_NE(a.second.epoch(3), a.second.epoch(4));
  // Each epoch visits every training index once.
  std::vector<std::size_t> seen;
  for (const auto& batch : a.second.epoch(2)) seen.insert(seen.end(), batch.begin(), batch.end());
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> train = a.first.train;
  std::sort(train.begin(), train.end());
  EXPECT_EQ(seen, train);
}

TEST(Blob, Float64RoundTripIsBitExact) {
  Dataset ds = gen_paraboloid(64, 0.2, 11);
  ds.x(0, 0) = -0.0;
  ds.x(1, 0) = std::numeric_limits<double>::denorm_min();
  ds.x(2, 0) = std::numeric_limits<double>::max();
  std::stringstream ss;
  write_f64_le(ss, ds.x.data(), static_cast<std::size_t>(ds.x.size()));
  EXPECT_EQ(ss.str().size(), 8u * ds.x.size());
  const std::vector<double> back = read_f64_le(ss, static_cast<std::size_t>(ds.x.size()));
  for (Eigen::Index k = 0; k < ds.x.size(); ++k)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[k]), std::bit_cast<std::uint64_t>(ds.x.data()[k]));
  std::stringstream one;
  const double v = 1.0;
  write_f64_le(one, &v, 1);
  EXPECT_EQ(one.str(), std::string("\0\0\0\0\0\0\xf0\x3f", 8));
  std::stringstream shortblob(std::string(12, '\0'));
  EXPECT_THROW(read_f64_le(shortblob, 2), ParseError);
}

TEST(Gather, SelectsColumns) {
  const Matrix x{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(gather_columns(x, {2, 0}), (Matrix{{3, 1}, {6, 4}}));
}
