#include <sstream>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "tdtd/config.hpp"
#include "tdtd/error.hpp"

using namespace tdtd;

TEST_SUITE("config") {

TEST_CASE("an empty file gives every default") {
  std::istringstream in("");
  const ExperimentConfig c = load_config(in);
  const ExperimentConfig d;
  CHECK(c.to_text() == d.to_text());
  CHECK_FALSE(c.model.has_value());
  CHECK(c.resolved_hidden_size(ModelKind::kTdtd) == 32);
  CHECK(c.resolved_hidden_size(ModelKind::kTdtdP) == 128);
  CHECK(c.max_depth == 7);
  CHECK(c.train.optimizer.kind == ad::OptimizerKind::kAdam);
  CHECK(c.train.optimizer.clip_norm == 5.0);
}

TEST_CASE("settings and comments") {
  std::istringstream in(
      "# experiment\n"
      "model = seq-lm\n"
      "hidden_size = 32   # small model\n"
      "\n"
      "learning_rate=0.01\n"
      "curriculum = true\n"
      "tf_anneal = exponential\n"
      "seed = 9\n");
  const ExperimentConfig c = load_config(in);
  CHECK(c.model == ModelKind::kSeqLm);
  CHECK(c.seq_lm_config().hidden_size == 32);
  CHECK(c.train.optimizer.learning_rate == 0.01);
  CHECK(c.train.curriculum.enabled);
  CHECK(c.train.sampling.anneal == AnnealKind::kExponential);
  CHECK(c.train_config().seed == 9);
}

TEST_CASE("an unparseable value is reported at its line") {
  std::istringstream in("hidden_size = banana\n");
  try {
    load_config(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 1);
    CHECK(std::string(e.what()).find("banana") != std::string::npos);
  }
}

TEST_CASE("unknown keys and malformed lines are rejected") {
  std::istringstream unknown("epochs = 3\nwarp_speed = 9\n");
  try {
    load_config(unknown);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 2);
    CHECK(std::string(e.what()).find("warp_speed") != std::string::npos);
  }
  std::istringstream no_eq("epochs 3\n");
  CHECK_THROWS_AS(load_config(no_eq), ParseError);
  std::istringstream bad_bool("curriculum = maybe\n");
  CHECK_THROWS_AS(load_config(bad_bool), ParseError);
}

TEST_CASE("data paths must exist and resolve against the config directory") {
  tdtd::testing::TempDir dir("config");
  tdtd::testing::write_file(dir / "train.txt", "(X a)\n");
  std::istringstream ok("train = train.txt\n");
  const ExperimentConfig c = load_config(ok, {}, dir.path());
  CHECK(c.train_path == (dir / "train.txt").string());
  std::istringstream missing("dev = nowhere.txt\n");
  CHECK_THROWS_AS(load_config(missing, {}, dir.path()), ParseError);
}

TEST_CASE("the seed is mandatory for training") {
  ExperimentConfig c;
  CHECK_THROWS_WITH(c.train_config(), doctest::Contains("seed"));
  c.set("seed", "4");
  CHECK(c.train_config().seed == 4);
}

TEST_CASE("to_text reloads to the same configuration") {
  ExperimentConfig c;
  c.set("model", "tdtd-p");
  c.set("embed_size", "16");
  c.set("batch_size", "4");
  c.set("tf_final_prob", "0.3");
  c.set("scaled_attention", "false");
  c.set("seed", "123");
  std::istringstream in(c.to_text());
  const ExperimentConfig back = load_config(in);
  CHECK(back.to_text() == c.to_text());
  CHECK(back.parser_config().decoder.embed_size == 16);
  CHECK_FALSE(back.parser_config().scaled_attention);
  // Every key appears in the echo, set or not.
  for (const std::string& key : ExperimentConfig::keys()) CHECK(c.to_text().find(key) != std::string::npos);
}

TEST_CASE("file settings override a base configuration") {
  ExperimentConfig base;
  base.set("epochs", "7");
  base.set("batch_size", "2");
  std::istringstream in("epochs = 3\n");
  const ExperimentConfig c = load_config(in, base);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.batch_size == 2);
}

}  // TEST_SUITE
