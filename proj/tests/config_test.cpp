#include <algorithm>
#include <fstream>
#include <functional>

#include <gtest/gtest.h>

#include "fedpft/config.hpp"
#include "test_util.hpp"

using namespace fedpft;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, EmptyOverridesGiveDefaults) {
  const auto c = config_from_overrides({});
  EXPECT_EQ(c.preset, "full");
  EXPECT_EQ(c.num_clients, 40u);
  EXPECT_EQ(c.batch_size, 100u);
  EXPECT_EQ(c.local_epochs, 5u);
  EXPECT_EQ(c.rounds, 1000u);
  EXPECT_EQ(c.feature_epochs, 4u);
  EXPECT_EQ(c.adaptation_epochs, 1u);
  EXPECT_EQ(c.n_kappa, 10u);
  EXPECT_EQ(c.n_rho, 20u);
  EXPECT_DOUBLE_EQ(c.lr.tau, 0.01);
  EXPECT_DOUBLE_EQ(c.lr.phi, 0.1);
  EXPECT_DOUBLE_EQ(c.lr.p_rho, 0.1);
  EXPECT_DOUBLE_EQ(c.momentum, 0.999);
  EXPECT_EQ(c.queue_size, 256u);
  EXPECT_EQ(c.ablation, ablation_setting("V"));
}

TEST(Config, DeskPreset) {
  const auto c = config_from_overrides({"run.preset=desk"});
  EXPECT_EQ(c.num_clients, 8u);
  EXPECT_EQ(c.rounds, 60u);
  EXPECT_EQ(c.batch_size, 20u);
  EXPECT_EQ(c.data.per_class, 50u);
  EXPECT_EQ(c.model.num_classes, 10u);
  EXPECT_EQ(c.model.input_dim, 16u);
  EXPECT_EQ(c.model.feature_dim, 16u);
  EXPECT_EQ(c.data.spread, 1.5);
  EXPECT_EQ(c.augmentation.noise_std, 0.5);
  EXPECT_EQ(c.augmentation.mask_prob, 0.3);
  EXPECT_THROW(config_from_overrides({"run.preset=huge"}), ConfigError);
}

TEST(Config, AlternativePhaseSplitAccepted) {
  const auto c = config_from_overrides(
      {"federation.feature_epochs=3", "federation.adaptation_epochs=2", "partition.alpha=0.1"});
  EXPECT_EQ(c.plan().feature_epochs, 3u);
  EXPECT_EQ(c.plan().adaptation_epochs, 2u);
  EXPECT_TRUE(c.warnings().empty());
}

TEST(Config, PhaseSplitMustSumToLocalEpochs) {
  const auto msg = error_of([] {
    config_from_overrides({"federation.feature_epochs=3", "federation.adaptation_epochs=3"});
  });
  EXPECT_NE(msg.find("R_f + R_a = R"), std::string::npos) << msg;
}

TEST(Config, AdaptationHeavySplitWarns) {
  const auto c = config_from_overrides({"federation.feature_epochs=2", "federation.adaptation_epochs=3"});
  EXPECT_FALSE(c.warnings().empty());
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_NE(error_of([] { config_from_overrides({"optim.lr_everything=1"}); }).find("optim.lr_everything"),
            std::string::npos);
  EXPECT_THROW(parse_config("[nosuch]\nkey = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 3\n"), ConfigError);
  EXPECT_THROW(config_from_overrides({"run.seed"}), ConfigError);
}

TEST(Config, MalformedValuesRejected) {
  EXPECT_THROW(config_from_overrides({"run.seed=-1"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"optim.temperature=warm"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"model.ffn=maybe"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"optim.temperature=0"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"federation.participation=0"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"partition.scheme=iid"}), ConfigError);
  EXPECT_THROW(config_from_overrides({"optim.lr_phi=-0.1"}), ConfigError);
}

TEST(Config, ZeroLearningRateAllowed) {
  EXPECT_EQ(config_from_overrides({"optim.lr_phi=0"}).lr.phi, 0);
}

TEST(Config, ContrastivePromptsNeedContrastiveLoss) {
  EXPECT_THROW(config_from_overrides({"ablation.use_L_con=false"}), ConfigError);
  EXPECT_NO_THROW(config_from_overrides({"ablation.use_L_con=false", "ablation.use_p_rho=false"}));
}

TEST(Config, NamedSettingAppliesBeforeFlags) {
  const auto c = config_from_overrides({"ablation.use_p_kappa=false", "ablation.setting=III"});
  EXPECT_FALSE(c.ablation.use_p_kappa);
  EXPECT_TRUE(c.ablation.use_alternating);
  EXPECT_FALSE(c.ablation.use_L_con);
}

TEST(Config, FileThenOverrides) {
  const auto c = parse_config("[run]\npreset = desk\nseed = 4\n\n[optim]\ntemperature = 0.5\n",
                              {"run.seed=9", "model.hidden=8, 4"});
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.num_clients, 8u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_DOUBLE_EQ(c.temperature, 0.5);
  EXPECT_EQ(c.model.hidden, (std::vector<std::size_t>{8, 4}));
}

TEST(Config, OverridePresetWinsOverFilePreset) {
  const auto c = parse_config("[run]\npreset = full\n", {"run.preset=desk"});
  EXPECT_EQ(c.num_clients, 8u);
}

TEST(Config, IniRoundTrip) {
  auto c = config_from_overrides({"run.preset=desk", "optim.temperature=0.123456789", "model.hidden=7,5",
                                  "ablation.setting=VII", "augment.mask_prob=0.25", "data.spread=1.75"});
  const auto back = parse_config(to_ini(c));
  EXPECT_EQ(to_ini(back), to_ini(c));
  EXPECT_EQ(back.temperature, c.temperature);
  EXPECT_EQ(back.model.hidden, c.model.hidden);
  EXPECT_EQ(back.ablation, c.ablation);
}

TEST(Config, EveryKeyIsSettable) {
  const auto keys = config_keys();
  EXPECT_EQ(std::count(keys.begin(), keys.end(), "ablation.setting"), 1);
  const auto ini = to_ini(config_from_overrides({}));
  for (const auto& k : keys) {
    if (k == "ablation.setting") continue;
    const auto key = k.substr(k.find('.') + 1);
    EXPECT_NE(ini.find("\n" + key + " = "), std::string::npos) << k;
  }
}

TEST(Config, LoadFromFile) {
  const auto dir = fedpft::testing::scratch_dir("config_file");
  {
    std::ofstream out(dir / "c.ini");
    out << "[federation]\nclients = 3\n[partition]\n";
  }
  EXPECT_EQ(load_config(dir / "c.ini").num_clients, 3u);
  EXPECT_THROW(load_config(dir / "missing.ini"), ConfigError);
}

TEST(Config, HyperMirrorsConfig) {
  const auto c = config_from_overrides({"optim.weight_con=0.5", "optim.tau_con_grad_phase2=true"});
  const auto h = c.hyper();
  EXPECT_EQ(h.weights.con, 0.5);
  EXPECT_TRUE(h.tau_con_grad_phase2);
  EXPECT_EQ(h.batch_size, c.batch_size);
  EXPECT_EQ(h.temperature, c.temperature);
}
