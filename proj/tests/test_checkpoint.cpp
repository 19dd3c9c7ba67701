#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "csfn/checkpoint.hpp"
#include "csfn/pipeline.hpp"
#include "support.hpp"

using namespace csfn;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "csfn_test_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("byte layout of a two-parameter file") {
  ParameterStore store;
  store.add("a", Tensor::from_rows({{1.0, -2.5}}));
  store.add("b", Tensor(2, 1, 0.5));
  const fs::path path = temp_path("layout.ckpt");
  save_checkpoint(path, {{"k", 1}}, store);

  const std::string bytes = read_bytes(path);
  REQUIRE(bytes.size() > 20);
  CHECK(bytes.substr(0, 8) == "CSFNCKPT");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&header_len, bytes.data() + 12, 8);
  CHECK(version == kCheckpointVersion);
  const auto header = nlohmann::json::parse(bytes.substr(20, header_len));
  CHECK(header.at("config").at("k") == 1);
  CHECK(header.at("parameters").size() == 2);
  CHECK(header.at("parameters")[0].at("name") == "a");
  CHECK(header.at("parameters")[1].at("shape") == nlohmann::json::array({2, 1}));
  REQUIRE(bytes.size() == 20 + header_len + 4 * sizeof(float));
  float values[4];
  std::memcpy(values, bytes.data() + 20 + header_len, sizeof(values));
  CHECK(values[0] == 1.0f);
  CHECK(values[1] == -2.5f);
  CHECK(values[2] == 0.5f);
  CHECK(values[3] == 0.5f);
}

TEST_CASE("round trip is lossless at 32 bits") {
  std::mt19937_64 rng(91);
  ParameterStore a, b;
  a.add("w", testing::random_tensor(3, 5, rng));
  a.add("v", testing::random_tensor(1, 4, rng));
  b.add("w", Tensor(3, 5));
  b.add("v", Tensor(1, 4));
  const fs::path path = temp_path("round.ckpt");
  save_checkpoint(path, {}, a);
  load_checkpoint(path, b);
  round_to_float(a);
  for (std::size_t i = 0; i < 2; ++i) CHECK(a.all()[i]->value == b.all()[i]->value);

  // A second cycle changes nothing.
  save_checkpoint(path, {}, b);
  const std::string first = read_bytes(path);
  load_checkpoint(path, b);
  save_checkpoint(path, {}, b);
  CHECK(read_bytes(path) == first);
}

TEST_CASE("malformed checkpoints are rejected") {
  ParameterStore store;
  store.add("w", Tensor(2, 2, 1.0));
  const fs::path path = temp_path("bad.ckpt");
  save_checkpoint(path, {}, store);
  const std::string good = read_bytes(path);

  SUBCASE("bad magic") {
    std::string b = good;
    b[0] = 'X';
    write_bytes(path, b);
    CHECK_THROWS_AS(read_checkpoint_header(path), CheckpointError);
  }
  SUBCASE("future version") {
    std::string b = good;
    b[8] = 9;
    write_bytes(path, b);
    CHECK_THROWS_AS(read_checkpoint_header(path), CheckpointError);
  }
  SUBCASE("truncated values") {
    write_bytes(path, good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(load_checkpoint(path, store), CheckpointError);
  }
  SUBCASE("shape mismatch") {
    ParameterStore other;
    other.add("w", Tensor(2, 3));
    CHECK_THROWS_AS(load_checkpoint(path, other), CheckpointError);
  }
  SUBCASE("name mismatch") {
    ParameterStore other;
    other.add("u", Tensor(2, 2));
    CHECK_THROWS_AS(load_checkpoint(path, other), CheckpointError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_checkpoint_header(temp_path("none.ckpt")), CheckpointError); }
}

TEST_CASE("model save and load") {
  const Corpus corpus = generate_toy_corpus(default_toy_schema(), 10, 3);
  TrainConfig cfg;
  cfg.model.d_model = 8;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.ablation = AblationMode::kIdentity;
  auto model = make_model(corpus, default_toy_schema(), cfg);
  model->set_ablation(AblationMode::kIdentity);
  const fs::path path = temp_path("model.ckpt");
  model->save(path);
  CHECK(fs::exists(vocab_path_for(path)));

  auto loaded = CsfnModel::load(path);
  CHECK(loaded->vocab() == model->vocab());
  CHECK(loaded->ablation() == AblationMode::kIdentity);
  CHECK(loaded->config().to_json() == model->config().to_json());
  round_to_float(model->params());
  const auto pa = model->params().all();
  const auto pb = loaded->params().all();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
  }
  const Turn& turn = corpus.train.front().turns.front();
  CHECK(loaded->predict(turn.system, turn.user, {}).state == model->predict(turn.system, turn.user, {}).state);

  fs::remove(vocab_path_for(path));
  CHECK_THROWS(CsfnModel::load(path));
}

}  // TEST_SUITE
