#pragma once

// Run configuration: flat `key = value` text with dotted keys and '#'
// comments. Every key has a default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dq/defenses.hpp"
#include "dq/train.hpp"

namespace dq {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  bool downsample = true;  // 32x32 -> 16x16 average pooling
  double synth_separation = 80;
  double synth_noise = 0.1;
  std::size_t synth_smooth = 2;
  std::size_t synth_shift = 0;
  double synth_contrast = 0;
};

// One attack column of a sweep: "fgsm:8", "pgd:8", or "bb-pgd:8" for a
// transfer attack crafted on a separately trained substitute.
struct SweepAttack {
  AttackKind kind = AttackKind::fgsm;
  double eps = 8;
  bool transfer = false;

  std::string label() const;
  bool operator==(const SweepAttack&) const = default;
};

SweepAttack parse_sweep_attack(const std::string& text);

struct SweepGrid {
  std::vector<int> bits{0, 1, 2, 3, 4, 5};  // 0 is full precision
  std::vector<double> betas{0, 3e-4, 1e-3, 2e-3};
  std::vector<SweepAttack> attacks{{AttackKind::fgsm, 8, false}};
};

struct RunConfig {
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  AttackConfig attack;
  AdvTrainConfig advtrain;
  bool advtrain_enabled = false;  // advtrain.method = none disables it
  SqueezeConfig squeeze;
  SweepGrid sweep;
  std::vector<double> analyze_eps{1, 2, 3, 4, 5, 6, 7, 8};
  std::uint64_t seed = 0;

  RunConfig();

  // Sets one key from its text form. Throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, one `key = value` line each.
  std::string resolved() const;
  // Cross-field checks; throws ConfigError naming the key.
  void validate() const;

  // Image shape the data pipeline produces.
  ImageShape input_shape() const;
  // model with input set from the data pipeline.
  ModelSpec model_spec() const;
  // train with its seed derived from the root seed.
  TrainConfig train_config() const;
  const AdvTrainConfig* adversarial() const { return advtrain_enabled ? &advtrain : nullptr; }
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

std::vector<std::string> config_keys();

struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_data(const RunConfig& cfg);

}  // namespace dq
