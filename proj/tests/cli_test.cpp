#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "dq/analysis.hpp"
#include "dq/cli.hpp"
#include "dq/config.hpp"
#include "dq/error.hpp"

namespace dq {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dq_cli_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    write_config("toy.conf", kToy);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    std::ofstream(root_ / name) << text;
    return root_ / name;
  }

  GlobalOptions global(const std::string& out, const std::string& config = "toy.conf") const {
    GlobalOptions g;
    g.config = root_ / config;
    g.out = root_ / out;
    return g;
  }

  static constexpr const char* kToy =
      "# tiny run\n"
      "data.train_limit = 40\n"
      "data.test_limit = 20\n"
      "data.synth.separation = 40\n"
      "model.blocks = 4:3:2,8:3:2\n"
      "model.classes = 4\n"
      "train.epochs = 3\n"
      "train.milestones = 2\n"
      "train.batch_size = 16\n"
      "train.lr = 0.05\n"
      "seed = 3\n";

  fs::path root_;
  std::ostringstream log_;
};

TEST_F(CliTest, TrainWritesArtifactsAndIsReproducible) {
  ASSERT_EQ(cmd_train(global("a"), log_), kExitOk) << log_.str();
  for (const char* f : {"config.resolved.txt", "loss_curve.csv", "model.dqw", "checkpoint_epoch2.dqw",
                        "checkpoint_epoch3.dqw"})
    EXPECT_TRUE(fs::exists(root_ / "a" / f)) << f;
  const RunConfig cfg = load_config(root_ / "a" / "config.resolved.txt");
  Model m(cfg.model_spec(), 0);
  EXPECT_NO_THROW(m.load_state(load_checkpoint(root_ / "a" / "model.dqw")));

  ASSERT_EQ(cmd_train(global("b"), log_), kExitOk);
  EXPECT_EQ(slurp(root_ / "a" / "loss_curve.csv"), slurp(root_ / "b" / "loss_curve.csv"));
  EXPECT_EQ(slurp(root_ / "a" / "model.dqw"), slurp(root_ / "b" / "model.dqw"));
}

TEST_F(CliTest, RefusesToClobberWithoutOverwrite) {
  ASSERT_EQ(cmd_train(global("a"), log_), kExitOk);
  EXPECT_EQ(cmd_train(global("a"), log_), kExitConfig);
  EXPECT_NE(log_.str().find("--overwrite"), std::string::npos);
  auto g = global("a");
  g.overwrite = true;
  EXPECT_EQ(cmd_train(g, log_), kExitOk);
}

TEST_F(CliTest, ConfigErrorsExitTwoNamingTheKey) {
  write_config("cifar.conf", std::string(kToy) + "data.source = cifar10\n");
  EXPECT_EQ(cmd_train(global("a", "cifar.conf"), log_), kExitConfig);
  EXPECT_NE(log_.str().find("data.train_path"), std::string::npos) << log_.str();

  write_config("typo.conf", std::string(kToy) + "quant.bitz = 3\n");
  EXPECT_EQ(cmd_train(global("b", "typo.conf"), log_), kExitConfig);
  EXPECT_NE(log_.str().find("quant.bitz"), std::string::npos);

  auto g = global("c");
  g.overrides = {"train.milestones=5"};
  EXPECT_EQ(cmd_train(g, log_), kExitConfig);
  EXPECT_NE(log_.str().find("train.milestones"), std::string::npos);
}

TEST_F(CliTest, NonFiniteTrainingExitsThree) {
  auto g = global("a");
  g.overrides = {"train.lr=1e300", "quant.mode=off"};
  EXPECT_EQ(cmd_train(g, log_), kExitNumeric) << log_.str();
}

TEST_F(CliTest, AttackJsonAndSchedule) {
  ASSERT_EQ(cmd_train(global("m"), log_), kExitOk);
  AttackOptions a;
  a.checkpoint = root_ / "m" / "model.dqw";
  a.eps = 0;
  GlobalOptions g;
  g.out = root_ / "zero";
  ASSERT_EQ(cmd_attack(g, a, log_), kExitOk) << log_.str();
  const auto j = nlohmann::json::parse(slurp(root_ / "zero" / "attack.json"));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"adversarial", "attack", "clean", "eps", "seed"}));
  EXPECT_EQ(j["clean"], j["adversarial"]);

  a.attack = "pgd";
  a.eps = 8;
  a.export_path = root_ / "adv.dqw";
  g.out = root_ / "pgd";
  std::ostringstream log;
  ASSERT_EQ(cmd_attack(g, a, log), kExitOk);
  EXPECT_NE(log.str().find("attack pgd eps 8 iterations 10"), std::string::npos) << log.str();
  const auto exported = load_checkpoint(root_ / "adv.dqw");
  ASSERT_EQ(exported.size(), 2u);
  EXPECT_EQ(exported[0].tensor.shape(), (Shape{20, 3, 16, 16}));
}

TEST_F(CliTest, AttackCheckpointMismatchExitsTwo) {
  ASSERT_EQ(cmd_train(global("m"), log_), kExitOk);
  write_config("other.conf", std::string(kToy) + "model.blocks = 6:3:2\n");
  AttackOptions a;
  a.checkpoint = root_ / "m" / "model.dqw";
  EXPECT_EQ(cmd_attack(global("x", "other.conf"), a, log_), kExitConfig);
  EXPECT_NE(log_.str().find("--checkpoint"), std::string::npos);
}

TEST_F(CliTest, AnalyzeProfiles) {
  ASSERT_EQ(cmd_train(global("m"), log_), kExitOk);
  AnalyzeOptions a;
  a.checkpoint = root_ / "m" / "model.dqw";
  a.eps = {0, 4};
  GlobalOptions g;
  g.out = root_ / "an";
  ASSERT_EQ(cmd_analyze(g, a, log_), kExitOk) << log_.str();
  std::ifstream in(root_ / "an" / "profiles.csv");
  const auto profiles = read_profiles_csv(in);
  ASSERT_EQ(profiles.size(), 4u);
  for (int i : {0, 1}) {
    EXPECT_EQ(profiles[i].eps, 0.0);
    for (double d : profiles[i].distances) EXPECT_EQ(d, 0.0);
  }
  EXPECT_TRUE(profiles[2].quantized);
  EXPECT_FALSE(profiles[3].quantized);
  EXPECT_TRUE(fs::exists(root_ / "an" / "spectral_norms.csv"));
}

TEST_F(CliTest, SweepSingleCellAndResume) {
  write_config("sweep.conf", std::string(kToy) + "sweep.bits = 2\nsweep.betas = 0\nsweep.attacks = fgsm:8\n");
  auto g = global("s", "sweep.conf");
  ASSERT_EQ(cmd_sweep(g, {}, log_), kExitOk) << log_.str();
  std::ifstream in(root_ / "s" / "report.csv");
  const auto report = read_report_csv(in);
  ASSERT_EQ(report.rows.size(), 2u);  // clean + fgsm
  EXPECT_EQ(report.rows[1].attack, "fgsm");
  EXPECT_TRUE(fs::exists(root_ / "s" / "table.csv"));

  std::ostringstream again;
  ASSERT_EQ(cmd_sweep(g, {true}, again), kExitOk);
  EXPECT_NE(again.str().find("reused vanilla_b2_beta0"), std::string::npos) << again.str();
  std::ifstream in2(root_ / "s" / "report.csv");
  EXPECT_EQ(read_report_csv(in2), report);

  g.overrides = {"train.lr=0.02"};
  std::ostringstream changed;
  ASSERT_EQ(cmd_sweep(g, {true}, changed), kExitOk);
  EXPECT_NE(changed.str().find("done vanilla_b2_beta0"), std::string::npos) << changed.str();
}

TEST_F(CliTest, FailedSweepCellIsMarkedIncomplete) {
  write_config("sweep.conf",
               std::string(kToy) + "sweep.bits = 0\nsweep.betas = 0\ntrain.lr = 1e300\nquant.mode = off\n");
  EXPECT_EQ(cmd_sweep(global("s", "sweep.conf"), {}, log_), kExitPartial);
  EXPECT_NE(slurp(root_ / "s" / "report.csv").find("incomplete"), std::string::npos);
}

TEST(Config, ResolvedTextRoundTrips) {
  RunConfig cfg;
  cfg.set("quant.bits", "3");
  cfg.set("reg.beta", "0.002");
  cfg.set("sweep.attacks", "fgsm:8,bb-pgd:8");
  cfg.set("advtrain.method", "pgd");
  std::istringstream in(cfg.resolved());
  EXPECT_EQ(parse_config(in).resolved(), cfg.resolved());
}

TEST(Config, EveryDocumentedKeyIsAccepted) {
  const auto keys = config_keys();
  for (const char* k : {"quant.mode", "quant.bits", "quant.range_max", "reg.beta", "reg.aggregation",
                        "defense.squeeze.bits", "defense.squeeze.median", "advtrain.method", "advtrain.delta",
                        "advtrain.mix", "seed"})
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
}

TEST(Config, SweepAttackLabels) {
  EXPECT_EQ(parse_sweep_attack("bb-pgd:8").label(), "bb-pgd:8");
  EXPECT_TRUE(parse_sweep_attack("bb-pgd:8").transfer);
  EXPECT_EQ(parse_sweep_attack("fgsm:4").eps, 4.0);
  EXPECT_EQ(parse_sweep_attack("fgsm").eps, 8.0);
  EXPECT_THROW(parse_sweep_attack("cw:8"), std::exception);
}

}  // namespace
}  // namespace dq
