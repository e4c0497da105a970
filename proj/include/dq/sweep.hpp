#pragma once

// Bits x beta grid: one trained model per cell, every configured attack
// evaluated on it, rows collected into a RobustnessReport.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "dq/analysis.hpp"
#include "dq/config.hpp"

namespace dq {

struct SweepSetup {
  ModelSpec base;  // quant.mode off is replaced by uniform for quantized cells
  TrainConfig train;
  std::optional<AdvTrainConfig> adv;
  std::uint64_t seed = 0;  // model init, substitute and attack streams derive from this
};

struct SweepCell {
  int bits = 0;
  double beta = 0;

  std::string tag() const { return beta == 0 ? "vanilla" : "dq"; }
  std::string id() const;
  ModelSpec spec(const ModelSpec& base) const;
};

struct SweepOptions {
  // Per-cell checkpoint, rows and checksum live under cell_root/<cell id>/.
  std::optional<std::filesystem::path> cell_root;
  bool resume = false;
  std::function<void(const SweepCell&, bool reused)> on_cell;
  std::function<void(const SweepCell&, const Model&)> on_model;
  std::function<void(const std::string&)> log;
};

// FNV-1a over pixel bytes and labels.
std::uint64_t dataset_hash(const Dataset& data);

RobustnessReport run_sweep(const SweepGrid& grid, const SweepSetup& setup, const DataSplits& data,
                           const SweepOptions& opts = {});

}  // namespace dq
