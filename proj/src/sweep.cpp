#include "dq/sweep.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string cell_fingerprint(const SweepCell& cell, const SweepGrid& grid, const SweepSetup& setup,
                             std::uint64_t data_hash) {
  const ModelSpec s = cell.spec(setup.base);
  std::ostringstream os;
  os << "blocks=" << format_blocks(s.blocks) << ";input=" << s.input[0] << 'x' << s.input[1] << 'x' << s.input[2]
     << ";classes=" << s.num_classes << ";quant=" << to_string(s.quant.mode) << ':' << s.quant.bits << ':'
     << format_number(s.quant.range_max) << ";beta=" << format_number(s.reg.beta)
     << ";agg=" << to_string(s.reg.aggregation) << ";apply=";
  for (const auto& a : s.reg.apply_to) os << a << ',';
  const auto& t = setup.train;
  os << ";epochs=" << t.epochs << ";lr=" << format_number(t.lr) << ";decay=" << format_number(t.decay)
     << ";milestones=";
  for (int m : t.milestones) os << m << ',';
  os << ";momentum=" << format_number(t.momentum) << ";batch=" << t.batch_size << ";tseed=" << t.seed
     << ";augment=" << t.augment << ";seed=" << setup.seed;
  if (setup.adv)
    os << ";adv=" << to_string(setup.adv->method) << ':' << format_number(setup.adv->delta) << ':'
       << format_number(setup.adv->mix);
  os << ";attacks=";
  for (const auto& a : grid.attacks) os << a.label() << ',';
  os << ";data=" << hex(data_hash);
  Fnv f;
  f.text(os.str());
  return hex(f.h);
}

AttackConfig attack_config(const SweepAttack& a, std::uint64_t seed) {
  AttackConfig cfg;
  cfg.kind = a.kind;
  cfg.epsilon = a.eps;
  cfg.seed = derive_seed(seed, "sweep/attack");
  return cfg;
}

std::string attack_name(const SweepAttack& a) { return std::string(a.transfer ? "bb-" : "") + to_string(a.kind); }

// Adversarial test batches crafted once on the substitute, keyed by label.
class TransferCache {
 public:
  TransferCache(const SweepGrid& grid, const SweepSetup& setup, const DataSplits& data,
                const std::function<void(const std::string&)>& log) {
    bool any = false;
    for (const auto& a : grid.attacks) any = any || a.transfer;
    if (!any) return;
    ModelSpec sub = setup.base;
    sub.quant.mode = QuantMode::off;
    sub.reg.beta = 0;
    Model substitute(sub, derive_seed(setup.seed, "sweep/substitute"));
    TrainConfig tc = setup.train;
    tc.seed = derive_seed(setup.seed, "sweep/substitute/train");
    if (log) log("training black-box substitute");
    train(substitute, data.train, tc);
    for (const auto& a : grid.attacks) {
      if (!a.transfer) continue;
      const AttackConfig cfg = attack_config(a, setup.seed);
      std::vector<Tensor<float>> batches;
      for (std::size_t begin = 0, b = 0; begin < data.test.size(); begin += kBatch, ++b) {
        const std::size_t count = std::min(kBatch, data.test.size() - begin);
        batches.push_back(
            run_attack(substitute, data.test.range_images(begin, count), data.test.range_labels(begin, count), cfg, b));
      }
      cache_[a.label()] = std::move(batches);
    }
  }

  double accuracy(const Model& target, const SweepAttack& a, const Dataset& test) const {
    const auto& batches = cache_.at(a.label());
    std::size_t correct = 0;
    for (std::size_t begin = 0, b = 0; begin < test.size(); begin += kBatch, ++b) {
      const auto y = test.range_labels(begin, std::min(kBatch, test.size() - begin));
      const auto pred = predict(target, batches[b]);
      for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
  }

  static constexpr std::size_t kBatch = 100;

 private:
  std::map<std::string, std::vector<Tensor<float>>> cache_;
};

}  // namespace

std::string SweepCell::id() const { return tag() + "_b" + std::to_string(bits) + "_beta" + format_number(beta); }

ModelSpec SweepCell::spec(const ModelSpec& base) const {
  ModelSpec s = base;
  if (bits == 0) {
    s.quant.mode = QuantMode::off;
  } else {
    if (s.quant.mode == QuantMode::off) s.quant.mode = QuantMode::uniform;
    s.quant.bits = bits;
  }
  s.reg.beta = beta;
  return s;
}

std::uint64_t dataset_hash(const Dataset& data) {
  Fnv f;
  f.bytes(data.images.data(), data.images.size() * sizeof(float));
  f.bytes(data.labels.data(), data.labels.size() * sizeof(int));
  f.bytes(data.image_shape.data(), sizeof data.image_shape);
  return f.h;
}

RobustnessReport run_sweep(const SweepGrid& grid, const SweepSetup& setup, const DataSplits& data,
                           const SweepOptions& opts) {
  if (grid.bits.empty() || grid.betas.empty()) throw std::invalid_argument("sweep: grid must be nonempty");
  const std::uint64_t data_hash = dataset_hash(data.train) ^ splitmix64(dataset_hash(data.test));
  std::optional<TransferCache> transfer;
  RobustnessReport report;

  for (double beta : grid.betas)
    for (int bits : grid.bits) {
      const SweepCell cell{bits, beta};
      const std::string fingerprint = cell_fingerprint(cell, grid, setup, data_hash);
      std::optional<std::filesystem::path> dir;
      if (opts.cell_root) dir = *opts.cell_root / cell.id();

      if (dir && opts.resume && std::filesystem::exists(*dir / "checksum") &&
          read_text(*dir / "checksum") == fingerprint + "\n") {
        std::ifstream in(*dir / "rows.csv");
        auto rows = read_report_csv(in).rows;
        if (opts.on_model) {
          Model m(cell.spec(setup.base), derive_seed(setup.seed, "sweep/model"));
          m.load_state(load_checkpoint(*dir / "model.dqw"));
          opts.on_model(cell, m);
        }
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        if (opts.on_cell) opts.on_cell(cell, true);
        continue;
      }

      if (opts.log) opts.log("cell " + cell.id());
      std::vector<ReportRow> rows;
      auto row = [&](const std::string& attack, double eps) {
        rows.push_back(ReportRow{cell.tag(), bits, beta, attack, eps, std::nullopt});
        return &rows.back().accuracy;
      };
      Model model(cell.spec(setup.base), derive_seed(setup.seed, "sweep/model"));
      bool ok = true;
      try {
        train(model, data.train, setup.train, setup.adv ? &*setup.adv : nullptr);
      } catch (const NumericError& e) {
        if (opts.log) opts.log("cell " + cell.id() + " incomplete: " + e.what());
        ok = false;
      }
      if (!ok) {
        row("clean", 0);
        for (const auto& a : grid.attacks) row(attack_name(a), a.eps);
      } else {
        *row("clean", 0) = evaluate(model, data.test);
        for (const auto& a : grid.attacks) {
          auto* acc = row(attack_name(a), a.eps);
          if (a.transfer) {
            if (!transfer) transfer.emplace(grid, setup, data, opts.log);
            *acc = transfer->accuracy(model, a, data.test);
          } else {
            *acc = evaluate(model, data.test, attack_config(a, setup.seed));
          }
        }
        if (opts.on_model) opts.on_model(cell, model);
        if (dir) {
          std::filesystem::create_directories(*dir);
          save_checkpoint(*dir / "model.dqw", model.state());
          {
            std::ofstream out(*dir / "rows.csv");
            write_report_csv(out, RobustnessReport{rows});
          }
          std::ofstream(*dir / "checksum") << fingerprint << '\n';
        }
      }
      report.rows.insert(report.rows.end(), rows.begin(), rows.end());
      if (opts.on_cell) opts.on_cell(cell, false);
    }
  return report;
}

}  // namespace dq
