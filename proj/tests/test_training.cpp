#include <doctest.h>

#include <filesystem>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"
#include "qsf/train.hpp"
#include "support.hpp"

using namespace qsf;
using qsf::test::micro_config;

namespace {

RunConfig micro_run(Stage stage, const std::string& out_dir, const std::string& init_from = {}) {
  RunConfig cfg;
  cfg.model = micro_config(stage);
  cfg.train = TrainConfig::desk(stage);
  cfg.train.steps = 40;
  cfg.train.batch_size = 4;
  cfg.train.warmup = 5;
  cfg.train.lr_max = 3e-3;
  cfg.train.lr_min = 1e-4;
  cfg.train.eval_interval = 20;
  cfg.train.eval_batches = 2;
  cfg.corpus = "memory";
  cfg.out_dir = out_dir;
  cfg.init_from = init_from;
  cfg.seed = 3;
  return cfg;
}

const Corpus& story_corpus() {
  static const Corpus c = Corpus::from_text(synthesize_story_corpus(1, 40000));
  return c;
}

std::string abab(std::size_t n) {
  std::string s;
  while (s.size() < n) s += "ab";
  return s;
}

}  // namespace

TEST_CASE("Stage I to II transfer copies the shared tensors bit for bit") {
  test::TempDir dir("transfer");
  const TrainResult one = train_stage(micro_run(Stage::I, dir.file("s1")), story_corpus());

  const Model two(micro_config(Stage::II));
  ad::ParamStore store;
  two.init_parameters(store, 9);
  const TransferResult r = transfer_and_freeze(one.final, two, store, {"tok_emb", "final_norm.*"});
  CHECK(r.transferred == std::vector<std::string>{"tok_emb", "pos_emb", "final_norm.gain", "final_norm.bias", "out_proj"});
  for (const auto& name : r.transferred) CHECK(store.at(name).value == one.final.params.at(name).value);
  CHECK(store.at("tok_emb").frozen);
  CHECK(store.at("final_norm.bias").frozen);
  CHECK_FALSE(store.at("out_proj").frozen);
  CHECK_FALSE(store.contains("layers.0.fnet_norm.gain"));

  ad::ParamStore again;
  two.init_parameters(again, 9);
  CHECK_THROWS_AS(transfer_and_freeze(one.final, two, again, {"nothing.*"}), ConfigError);

  StageConfig wide = micro_config(Stage::II);
  wide.d = 16;
  ad::ParamStore w;
  Model(wide).init_parameters(w, 1);
  try {
    transfer_and_freeze(one.final, Model(wide), w, {});
    FAIL("expected TransferError");
  } catch (const TransferError& e) {
    CHECK(std::string(e.what()).find("d") != std::string::npos);
  }
}

TEST_CASE("frozen tensors stay bit-stable while the rest trains") {
  test::TempDir dir("frozen");
  const TrainResult one = train_stage(micro_run(Stage::I, dir.file("s1")), story_corpus());
  RunConfig cfg = micro_run(Stage::II, dir.file("s2"), one.checkpoint_path);
  cfg.train.steps = 100;
  cfg.train.warmup = 10;
  cfg.train.freeze_fraction = 1.0;
  const TrainResult two = train_stage(cfg, story_corpus());
  for (const char* name : {"tok_emb", "pos_emb", "final_norm.gain", "final_norm.bias", "out_proj"}) {
    CHECK(two.final.params.at(name).value == one.final.params.at(name).value);
  }
  Model fresh(cfg.model);
  ad::ParamStore init;
  fresh.init_parameters(init, cfg.seed);
  CHECK(two.final.params.at("layers.0.koopman").value != init.at("layers.0.koopman").value);

  SUBCASE("default freeze phase releases the tensors") {
    RunConfig phased = cfg;
    phased.out_dir = dir.file("s2b");
    phased.train.freeze_fraction = 0.25;
    const TrainResult r = train_stage(phased, story_corpus());
    CHECK(r.final.metadata["frozen_until"] == 25);
    CHECK(r.final.params.at("out_proj").value != one.final.params.at("out_proj").value);
    CHECK_FALSE(r.final.params.at("out_proj").frozen);
  }
}

TEST_CASE("Stage II to III transfer") {
  test::TempDir dir("transfer3");
  const TrainResult one = train_stage(micro_run(Stage::I, dir.file("s1")), story_corpus());
  const TrainResult two = train_stage(micro_run(Stage::II, dir.file("s2"), one.checkpoint_path), story_corpus());

  StageConfig c3 = micro_config(Stage::III);
  c3.zeta_init = 0.75;
  const Model three(c3);
  ad::ParamStore store;
  three.init_parameters(store, 4);
  const TransferResult r = transfer_and_freeze(two.final, three, store, {});
  CHECK(store.at("layers.1.koopman").value == two.final.params.at("layers.1.koopman").value);
  CHECK(store.at("layers.1.norm.gain").value == two.final.params.at("layers.1.norm.gain").value);
  for (double z : three.zeta_values(store)) CHECK(z == 0.75);
  CHECK(store.at("layers.0.attn.c").value.isZero());
  CHECK(std::find(r.fresh.begin(), r.fresh.end(), "layers.0.attn.wq") != r.fresh.end());

  const Model four(micro_config(Stage::IV));
  ad::ParamStore s4;
  four.init_parameters(s4, 4);
  const TransferResult r4 = transfer_and_freeze(two.final, four, s4, {});
  CHECK(std::find(r4.transferred.begin(), r4.transferred.end(), "layers.0.koopman") == r4.transferred.end());
  CHECK(std::find(r4.fresh.begin(), r4.fresh.end(), "layers.0.hamiltonian_w") != r4.fresh.end());

  RunConfig wrong = micro_run(Stage::III, dir.file("s3"), one.checkpoint_path);
  CHECK_THROWS_AS(train_stage(wrong, story_corpus()), ConfigError);
}

TEST_CASE("micro Stage II learns an alternating sequence") {
  test::TempDir dir("abab");
  const Corpus corpus = Corpus::from_text(abab(1024));
  RunConfig c1 = micro_run(Stage::I, dir.file("s1"));
  c1.train.steps = 10;
  const TrainResult one = train_stage(c1, corpus);

  RunConfig c2 = micro_run(Stage::II, dir.file("s2"), one.checkpoint_path);
  c2.train.steps = 300;
  c2.train.warmup = 20;
  c2.train.lr_max = 1e-2;
  const TrainResult two = train_stage(c2, corpus);
  INFO("first ", two.first_train_loss, " final ", two.final_train_loss);
  CHECK(two.final_train_loss < 0.1 * two.first_train_loss);

  GenerateOptions opts;
  opts.max_tokens = 12;
  const std::string out = generate(two.final, "a", opts);
  CHECK(out == "ababababababa");

  CHECK(std::filesystem::exists(dir.file("s2/metrics.csv")));
  CHECK(read_file(dir.file("s2/metrics.csv")).rfind("step,split,loss,lr\n", 0) == 0);
  const Checkpoint loaded = load_checkpoint(two.checkpoint_path, c2.model);
  CHECK(loaded.params.at("out_proj").value == two.final.params.at("out_proj").value);
}

TEST_CASE("same seed, same bytes, independent of thread count") {
  test::TempDir dir("determinism");
  RunConfig a = micro_run(Stage::I, dir.file("a"));
  RunConfig b = micro_run(Stage::I, dir.file("b"));
  b.train.threads = 3;
  train_stage(a, story_corpus());
  train_stage(b, story_corpus());
  CHECK(read_file(dir.file("a/final.qsfc")) == read_file(dir.file("b/final.qsfc")));
  CHECK(read_file(dir.file("a/metrics.csv")) == read_file(dir.file("b/metrics.csv")));

  RunConfig c = micro_run(Stage::I, dir.file("c"));
  c.seed = 4;
  train_stage(c, story_corpus());
  CHECK(read_file(dir.file("a/final.qsfc")) != read_file(dir.file("c/final.qsfc")));
}

TEST_CASE("divergence stops the run and keeps the last good parameters") {
  test::TempDir dir("diverge");
  RunConfig cfg = micro_run(Stage::I, dir.file("run"));
  cfg.train.lr_max = 1e300;
  cfg.train.lr_min = 0.0;
  cfg.train.eval_interval = 1;
  try {
    train_stage(cfg, story_corpus());
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.last_good_checkpoint() == dir.file("run/last_good.qsfc"));
  }
  REQUIRE(std::filesystem::exists(dir.file("run/last_good.qsfc")));
  const Checkpoint good = load_checkpoint(dir.file("run/last_good.qsfc"));
  for (const auto& p : good.params.params()) CHECK(p.value.allFinite());
  CHECK_FALSE(std::filesystem::exists(dir.file("run/final.qsfc")));
}

TEST_CASE("generation") {
  test::TempDir dir("generate");
  const TrainResult one = train_stage(micro_run(Stage::I, dir.file("s1")), story_corpus());
  GenerateOptions greedy;
  greedy.max_tokens = 20;
  const std::string x = generate(one.final, "Once", greedy);
  CHECK(x == generate(one.final, "Once", greedy));
  CHECK(x.rfind("Once", 0) == 0);
  CHECK(x.size() == 24);

  GenerateOptions longer = greedy;
  longer.max_tokens = 30;
  CHECK(generate(one.final, "Once", longer).rfind(x, 0) == 0);

  GenerateOptions none;
  none.max_tokens = 0;
  CHECK(generate(one.final, "Once", none) == "Once");

  CHECK_THROWS_AS(generate(one.final, std::string(17, 'a'), greedy), RangeError);
  CHECK_THROWS_AS(generate(one.final, "", greedy), RangeError);
  GenerateOptions neg;
  neg.temperature = -1.0;
  CHECK_THROWS_AS(generate(one.final, "a", neg), RangeError);

  GenerateOptions sampled;
  sampled.max_tokens = 40;
  sampled.temperature = 1.0;
  sampled.seed = 5;
  CHECK(generate(one.final, "a", sampled) == generate(one.final, "a", sampled));

  // Past seq_len the context slides instead of failing.
  GenerateOptions many = greedy;
  many.max_tokens = 40;
  CHECK(generate(one.final, std::string(16, 'a'), many).size() == 56);
}

TEST_CASE("micro Stage III loss decreases") {
  test::TempDir dir("stage3");
  const TrainResult one = train_stage(micro_run(Stage::I, dir.file("s1")), story_corpus());
  const TrainResult two = train_stage(micro_run(Stage::II, dir.file("s2"), one.checkpoint_path), story_corpus());
  RunConfig c3 = micro_run(Stage::III, dir.file("s3"), two.checkpoint_path);
  c3.train.steps = 200;
  c3.train.eval_interval = 50;
  const TrainResult three = train_stage(c3, story_corpus());
  CHECK(three.final_train_loss < three.first_train_loss);
  const auto& history = three.final.metadata["val_history"];
  CHECK(history.back()[1].get<double>() < history.front()[1].get<double>());
  CHECK(three.zeta.records().size() == 5);
  CHECK(std::filesystem::exists(dir.file("s3/zeta_summary.csv")));
}

TEST_CASE("evaluation and batch gradients") {
  const Model model(micro_config(Stage::II));
  ad::ParamStore store;
  model.init_parameters(store, 1);
  std::mt19937_64 rng(2);
  const Batch batch = sample_batch(story_corpus(), Split::Train, 5, 16, rng);
  ad::Gradients g1, g4;
  const double l1 = batch_gradients(model, store, batch, false, 0, 1, g1);
  const double l4 = batch_gradients(model, store, batch, false, 0, 4, g4);
  CHECK(l1 == l4);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1.at(i) == g4.at(i));
  CHECK(evaluate(model, store, {batch}) == doctest::Approx(l1).epsilon(1e-14));
  CHECK(l1 == doctest::Approx(std::log(256.0)).epsilon(0.05));
}
