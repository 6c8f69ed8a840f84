#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "tdtd/error.hpp"
#include "tdtd/training.hpp"

using namespace tdtd;

namespace {

std::vector<Tree> toy_trees(std::size_t count, std::size_t nodes, std::uint64_t seed) {
  return generate_dataset(tdtd::testing::toy_grammar(), {.count = count, .target_nodes = nodes, .seed = seed});
}

std::vector<Tree> mixed_trees() {
  std::vector<Tree> out;
  for (std::size_t nodes : {4, 6, 10, 14}) {
    for (Tree& t : toy_trees(15, nodes, nodes)) out.push_back(std::move(t));
  }
  return out;
}

TdtdModel small_tdtd(const std::vector<Tree>& vocab_trees, std::uint64_t seed) {
  TdtdConfig c;
  c.hidden_size = c.embed_size = 8;
  return TdtdModel(c, SymbolVocab::from_trees(vocab_trees, false), seed);
}

std::string checkpoint_text(const Trainable& t) {
  std::ostringstream out;
  t.save(out);
  return out.str();
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("model kinds parse and print") {
  CHECK(parse_model_kind("tdtd") == ModelKind::kTdtd);
  CHECK(parse_model_kind("tdtd-p") == ModelKind::kTdtdP);
  CHECK(parse_model_kind("seq-lm") == ModelKind::kSeqLm);
  CHECK(to_string(ModelKind::kTdtdP) == "tdtd-p");
  CHECK_THROWS(parse_model_kind("lstm"));
}

TEST_CASE("curriculum at epoch 0 keeps only shallow, narrow trees") {
  const auto trees = mixed_trees();
  CurriculumConfig c;
  c.enabled = true;
  c.initial_depth = 3;
  c.initial_width = 4;
  const auto kept = curriculum_filter(trees, 0, c);
  CHECK_FALSE(kept.empty());
  CHECK(kept.size() < trees.size());
  for (std::size_t i : kept) {
    CHECK(trees[i].depth() <= 3);
    CHECK(layer_view(trees[i]).max_width() <= 4);
  }
  std::size_t eligible = 0;
  for (const Tree& t : trees) eligible += (t.depth() <= 3 && layer_view(t).max_width() <= 4) ? 1 : 0;
  CHECK(kept.size() == eligible);
}

TEST_CASE("curriculum subsets grow monotonically and end at the identity") {
  const auto trees = mixed_trees();
  CurriculumConfig c;
  c.enabled = true;
  c.initial_depth = 3;
  c.initial_width = 3;
  c.period = 2;
  std::vector<std::size_t> prev = curriculum_filter(trees, 0, c);
  for (std::size_t epoch = 1; epoch < 30; ++epoch) {
    const auto cur = curriculum_filter(trees, epoch, c);
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
  CHECK(prev.size() == trees.size());
  CurriculumConfig off;
  CHECK(curriculum_filter(trees, 0, off).size() == trees.size());
}

TEST_CASE("a curriculum that keeps nothing at epoch 0 is an error") {
  const auto trees = toy_trees(10, 12, 3);
  CurriculumConfig c;
  c.enabled = true;
  c.initial_depth = 1;
  c.initial_width = 1;
  CHECK_THROWS_WITH(curriculum_filter(trees, 0, c), doctest::Contains("epoch 0"));
}

TEST_CASE("teacher-forcing probability schedule") {
  ScheduledSamplingConfig s;
  s.enabled = true;
  s.initial_prob = 1.0;
  s.final_prob = 0.5;
  s.anneal_steps = 1000;
  CHECK(teacher_forcing_prob(0, s) == 1.0);
  CHECK(teacher_forcing_prob(500, s) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(teacher_forcing_prob(1000, s) == 0.5);
  CHECK(teacher_forcing_prob(5000, s) == 0.5);
  s.anneal = AnnealKind::kExponential;
  CHECK(teacher_forcing_prob(0, s) == doctest::Approx(1.0));
  CHECK(teacher_forcing_prob(500, s) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(teacher_forcing_prob(2000, s) == 0.5);
  ScheduledSamplingConfig off;
  CHECK(teacher_forcing_prob(700, off) == 1.0);
}

TEST_CASE("zero epochs report only the initial dev NLL") {
  const auto train_set = toy_trees(20, 8, 1);
  const auto dev = toy_trees(10, 8, 2);
  std::vector<Tree> all = train_set;
  all.insert(all.end(), dev.begin(), dev.end());
  TdtdModel m = small_tdtd(all, 3);
  auto t = make_trainable(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainReport r = train(*t, train_set, dev, cfg);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].epoch == 0);
  CHECK(std::isnan(r.rows[0].train_nll));
  CHECK(r.rows[0].dev_nll == doctest::Approx(mean_nll(*t, dev)));
  std::ostringstream tsv;
  r.write_tsv(tsv);
  CHECK(tsv.str().rfind("epoch\ttrain_nll\tdev_nll\ttf_prob\tcurriculum_depth_cap\tcurriculum_width_cap\n", 0) == 0);
}

TEST_CASE("training with a fixed seed is bit-identical") {
  const auto train_set = toy_trees(30, 8, 4);
  const auto dev = toy_trees(10, 8, 5);
  std::vector<Tree> all = train_set;
  all.insert(all.end(), dev.begin(), dev.end());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 77;
  cfg.sampling.enabled = true;
  cfg.sampling.final_prob = 0.6;
  cfg.sampling.anneal_steps = 4;
  auto run = [&] {
    TdtdModel m = small_tdtd(all, 6);
    auto t = make_trainable(m);
    std::vector<std::string> checkpoints;
    const TrainReport r = train(*t, train_set, dev, cfg,
                                [&](std::size_t, const Trainable& tr) { checkpoints.push_back(checkpoint_text(tr)); });
    std::ostringstream tsv;
    r.write_tsv(tsv);
    return std::make_pair(tsv.str(), checkpoints);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  REQUIRE(a.second.size() == 2);
  CHECK(a.second == b.second);
}

TEST_CASE("teacher-forcing probability one equals plain teacher forcing") {
  const auto trees = toy_trees(5, 10, 7);
  TdtdModel m = small_tdtd(trees, 8);
  Rng rng(9);
  for (const Tree& t : trees) {
    ad::Graph g1, g2;
    const double plain = g1.scalar_value(m.tree_log_prob(g1, t));
    const double forced = g2.scalar_value(m.tree_log_prob(g2, t, nullptr, {1.0, &rng}));
    CHECK(std::memcmp(&plain, &forced, sizeof plain) == 0);
  }
  // The rng is untouched, so a whole training run matches one without sampling.
  TrainConfig a;
  a.epochs = 1;
  a.batch_size = 5;
  TrainConfig b = a;
  b.sampling.enabled = true;
  b.sampling.initial_prob = 1.0;
  b.sampling.final_prob = 1.0;
  TdtdModel ma = small_tdtd(trees, 10);
  TdtdModel mb = small_tdtd(trees, 10);
  auto ta = make_trainable(ma);
  auto tb = make_trainable(mb);
  train(*ta, trees, {}, a);
  train(*tb, trees, {}, b);
  CHECK(checkpoint_text(*ta) == checkpoint_text(*tb));
}

TEST_CASE("scheduled sampling below one changes the fed inputs") {
  const auto trees = toy_trees(5, 12, 11);
  TdtdModel m = small_tdtd(trees, 12);
  Rng rng(13);
  bool differs = false;
  for (const Tree& t : trees) {
    ad::Graph g1, g2;
    const double plain = g1.scalar_value(m.tree_log_prob(g1, t));
    const double sampled = g2.scalar_value(m.tree_log_prob(g2, t, nullptr, {0.0, &rng}));
    differs = differs || plain != sampled;
  }
  CHECK(differs);
}

TEST_CASE("dev NLL decreases over five epochs on the toy grammar") {
  const auto train_set = toy_trees(200, 10, 21);
  const auto dev = toy_trees(50, 10, 22);
  std::vector<Tree> all = train_set;
  all.insert(all.end(), dev.begin(), dev.end());
  TdtdModel m = small_tdtd(all, 23);
  auto t = make_trainable(m);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.optimizer.learning_rate = 1e-2;
  const TrainReport r = train(*t, train_set, dev, cfg);
  REQUIRE(r.rows.size() == 6);
  CHECK(r.rows[5].dev_nll < r.rows[0].dev_nll);
  for (const EpochRow& row : r.rows) CHECK(std::isfinite(row.dev_nll));
}

TEST_CASE("all three model kinds train through the shared loop") {
  const auto train_set = toy_trees(20, 6, 31);
  std::vector<std::vector<std::string>> seqs;
  for (const Tree& t : train_set) seqs.push_back(linearize_brackets(t));
  SeqLm lm(SeqLmConfig{8, 8, 200}, TokenVocab::from_sequences(seqs), 1);
  ParserConfig pc;
  pc.decoder.hidden_size = pc.decoder.embed_size = 8;
  TdtdParser parser(pc, SymbolVocab::from_trees(train_set, true), 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.optimizer.learning_rate = 1e-2;
  for (auto* t : {make_trainable(lm).release(), make_trainable(parser).release()}) {
    std::unique_ptr<Trainable> owned(t);
    const TrainReport r = train(*owned, train_set, train_set, cfg);
    CHECK(r.rows.size() == 3);
    CHECK(r.rows[2].dev_nll < r.rows[0].dev_nll);
  }
}

TEST_CASE("a non-finite loss aborts with diagnostics") {
  const auto trees = toy_trees(10, 6, 41);
  TdtdModel m = small_tdtd(trees, 42);
  m.params().at("head.gate_b").values[0] = std::numeric_limits<double>::quiet_NaN();
  auto t = make_trainable(m);
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(*t, trees, {}, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 1") != std::string::npos);
    CHECK(msg.find("norm") != std::string::npos);
  }
}

TEST_CASE("invalid training settings are rejected") {
  const auto trees = toy_trees(5, 6, 51);
  TdtdModel m = small_tdtd(trees, 52);
  auto t = make_trainable(m);
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(*t, trees, {}, cfg), ContractError);
  cfg.batch_size = 4;
  CHECK_THROWS_AS(train(*t, std::vector<Tree>{}, {}, cfg), ContractError);
  cfg.sampling.final_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

}  // TEST_SUITE
