#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fivelab/checks.hpp"
#include "fivelab/config.hpp"

using namespace fivelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fivelab_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string checkpoint_text(const Model& m) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, m);
  return os.str();
}

Model reread(const std::string& text) {
  std::istringstream is(text, std::ios::binary);
  return read_checkpoint(is);
}

std::string replace_line(std::string text, const std::string& key, const std::string& line) {
  const auto b = text.find(key + "=");
  const auto e = text.find('\n', b);
  return text.replace(b, e - b, line);
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (ModelKind kind : {ModelKind::Vae, ModelKind::FcVae, ModelKind::Fif, ModelKind::Five}) {
    Rng rng(1);
    Model m = random_model(kind, {5, 2, {7, 3}, 1}, rng);
    m.noise.log_sigma = -1.2345678901234567;
    const Model back = reread(checkpoint_text(m));
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.latent_dim, m.latent_dim);
    EXPECT_EQ(back.flatten(), m.flatten()) << to_string(kind);
    EXPECT_EQ(checkpoint_text(back), checkpoint_text(m));
  }
}

TEST(Checkpoint, HeaderLayout) {
  const Model m = make_model(ModelKind::Five, 3, 2, {4}, Activation::ReLU, 0.0);
  const std::string text = checkpoint_text(m);
  EXPECT_EQ(text.rfind("magic=FIVELAB1\nmodel=five\nd=2\nn=3\nhidden=4\nactivation=relu\nlog_sigma=0\n", 0), 0u)
      << text.substr(0, 120);
  const std::size_t count = static_cast<std::size_t>(m.encoder.parameter_count() + m.decoder.parameter_count());
  const auto blank = text.find("\n\n");
  ASSERT_NE(blank, std::string::npos);
  EXPECT_EQ(text.size() - blank - 2, 8 * count);
  EXPECT_NE(text.find("blob_len=" + std::to_string(8 * count) + "\n"), std::string::npos);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const fs::path dir = scratch("file");
  Rng rng(2);
  const Model m = random_model(ModelKind::Fif, {4, 2, {6}, 1}, rng);
  save_checkpoint((dir / "m.ckpt").string(), m);
  EXPECT_EQ(load_checkpoint((dir / "m.ckpt").string()).flatten(), m.flatten());
  EXPECT_THROW(load_checkpoint((dir / "absent.ckpt").string()), DataError);
}

TEST(Checkpoint, CorruptionIsRejected) {
  Rng rng(3);
  const std::string good = checkpoint_text(random_model(ModelKind::Vae, {4, 2, {6}, 1}, rng));
  EXPECT_THROW(reread(replace_line(good, "magic", "magic=FIVELAB0")), ParseError);
  EXPECT_THROW(reread(replace_line(good, "blob_len", "blob_len=8")), ParseError);
  EXPECT_THROW(reread(replace_line(good, "d", "dd=2")), ParseError);
  EXPECT_THROW(reread(replace_line(good, "model", "model=pca")), ParseError);
  EXPECT_THROW(reread(good.substr(0, good.size() - 3)), ParseError);
  EXPECT_THROW(reread(good + "x"), ParseError);
  EXPECT_THROW(reread("garbage\n\n"), ParseError);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  std::istringstream is(
      "# sample\n"
      "model = vae\n"
      "hidden_dims=32,16   # two layers\n"
      "\n"
      "latent_dim=3\n"
      "lr=5e-4\n"
      "sigma_frozen=true\n"
      "probe_dist=gaussian\n"
      "data_cov_diag=4, 2.5, 1\n");
  const ModelConfig c = parse_config(is);
  EXPECT_EQ(c.model, ModelKind::Vae);
  EXPECT_EQ(c.hidden_dims, (std::vector<int>{32, 16}));
  EXPECT_EQ(c.latent_dim, 3);
  EXPECT_EQ(c.lr, 5e-4);
  EXPECT_TRUE(c.sigma_frozen);
  EXPECT_EQ(c.probe_dist, ProbeDist::Gaussian);
  EXPECT_EQ(c.data_cov_diag, (std::vector<double>{4.0, 2.5, 1.0}));
  EXPECT_EQ(c.epochs, ModelConfig{}.epochs);
}

TEST(Config, TextRoundTrip) {
  ModelConfig c;
  c.model = ModelKind::FcVae;
  c.dataset = "mnist";
  c.data_path = "/data/images";
  c.hidden_dims = {256};
  c.activation = Activation::ReLU;
  c.lr = 0.1 + 0.2;
  c.weight_decay = 1e-3;
  c.seed = 18446744073709551615ULL;
  c.sigma_init = 1.0 / 3.0;
  c.test_size = 17;
  c.serial = false;
  const std::string text = to_config_text(c);
  std::istringstream is(text);
  const ModelConfig back = parse_config(is);
  EXPECT_EQ(to_config_text(back), text);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.sigma_init, c.sigma_init);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Config, ErrorsNameTheProblem) {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    std::istringstream is(text);
    try {
      parse_config(is, "cfg");
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  fails_with("colour=blue\n", "colour");
  fails_with("lr=1\nlr=2\n", "cfg:2");
  fails_with("lr=fast\n", "lr");
  fails_with("epochs=0\n", "epochs");
  fails_with("model=pca\n", "model");
  fails_with("just text\n", "cfg:1");
  fails_with("hidden_dims=8,x\n", "hidden_dims");
  fails_with("sigma_frozen=maybe\n", "sigma_frozen");
  EXPECT_THROW(load_config("/nonexistent/fivelab.cfg"), ConfigError);
}

TEST(CsvDataset, HeaderColumnsAndErrors) {
  const fs::path dir = scratch("csv");
  {
    std::ofstream os(dir / "ok.csv");
    os << "a,b,c\n1,2,3\n4.5, -5,6e1\n";
  }
  const Dataset ds = load_csv_dataset((dir / "ok.csv").string());
  ASSERT_EQ(ds.x.rows(), 3);
  ASSERT_EQ(ds.x.cols(), 2);
  EXPECT_EQ(ds.x(0, 1), 4.5);
  EXPECT_EQ(ds.x(1, 1), -5.0);
  EXPECT_EQ(ds.x(2, 1), 60.0);
  {
    std::ofstream os(dir / "ragged.csv");
    os << "1,2\n3\n";
  }
  EXPECT_THROW(load_csv_dataset((dir / "ragged.csv").string()), DataError);
  {
    std::ofstream os(dir / "empty.csv");
    os << "x,y\n";
  }
  EXPECT_THROW(load_csv_dataset((dir / "empty.csv").string()), DataError);
  {
    std::ofstream os(dir / "nan.csv");
    os << "1,nan\n";
  }
  EXPECT_THROW(load_csv_dataset((dir / "nan.csv").string()), DataError);
  EXPECT_THROW(load_csv_dataset((dir / "absent.csv").string()), DataError);
}

TEST(DatasetSpec, Forms) {
  const Dataset p = dataset_from_spec("paraboloid:25:0", 4);
  EXPECT_EQ(p.x.cols(), 25);
  EXPECT_EQ(p.x.rows(), 3);
  for (Eigen::Index i = 0; i < p.x.cols(); ++i)
    EXPECT_NEAR(p.x(2, i), p.x(0, i) * p.x(0, i) + p.x(1, i) * p.x(1, i), 1e-12);
  const Dataset l = dataset_from_spec("linear_gauss:30:4,1", 4);
  EXPECT_EQ(l.x.rows(), 2);
  EXPECT_EQ(l.x.cols(), 30);
  EXPECT_EQ(dataset_from_spec("paraboloid:25:0", 4).x, p.x);
  EXPECT_THROW(dataset_from_spec("paraboloid:0", 4), DataError);
  EXPECT_THROW(dataset_from_spec("linear_gauss:0:1,1", 4), DataError);
  EXPECT_THROW(dataset_from_spec("spiral:10", 4), ConfigError);
  EXPECT_THROW(dataset_from_spec("csv:/nonexistent.csv", 4), DataError);
}
