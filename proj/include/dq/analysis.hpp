#pragma once

// Error-amplification diagnostics and robustness tables.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dq/attacks.hpp"
#include "dq/data.hpp"

namespace dq {

// ||a - b||_2 / ||a||_2, accumulated in double. Throws
// DegenerateActivationError when ||a||_2 is zero.
double normalized_distance(std::span<const float> a, std::span<const float> b);

struct AmplificationProfile {
  std::vector<std::string> layer_names;
  std::vector<double> distances;
  double eps = 0;
  bool quantized = true;

  bool operator==(const AmplificationProfile&) const = default;
};

// Normalized distance between clean and perturbed post-activation maps at
// every block boundary. A degenerate clean activation is reported with the
// offending layer name.
AmplificationProfile layer_profile(const Model& model, const Tensor<float>& x, const Tensor<float>& x_adv,
                                   bool quant_on, double eps = 0);

// Percent of correct argmax predictions, on attacked inputs when `attack` is
// set. Batch b uses attack stream b.
double evaluate(const Classifier& model, const Dataset& data, const std::optional<AttackConfig>& attack = std::nullopt,
                std::size_t batch_size = 100);

// Rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// layer_index,layer_name,eps,quantized,distance
void write_profiles_csv(std::ostream& out, const std::vector<AmplificationProfile>& profiles);
std::vector<AmplificationProfile> read_profiles_csv(std::istream& in);

// Largest singular value of every regularized weight, by layer name.
std::vector<std::pair<std::string, double>> spectral_norms(const Model& model, int iters = 200,
                                                           std::uint64_t seed = 0);
void write_spectral_csv(std::ostream& out, const std::vector<std::pair<std::string, double>>& norms);

struct ReportRow {
  std::string model_tag;
  int bits = 0;  // 0 is full precision
  double beta = 0;
  std::string attack;  // "clean" for unattacked accuracy
  double eps = 0;
  std::optional<double> accuracy;  // empty marks an incomplete cell

  bool operator==(const ReportRow&) const = default;
};

struct RobustnessReport {
  std::vector<ReportRow> rows;

  // Best quantized accuracy minus full-precision accuracy for one
  // (tag, beta, attack, eps) group; empty if either side is missing.
  std::optional<double> quantize_gain(const std::string& tag, double beta, const std::string& attack,
                                      double eps) const;
  bool complete() const;
  bool operator==(const RobustnessReport&) const = default;
};

// model_tag,bits,beta,attack,eps,accuracy ("incomplete" for missing values).
void write_report_csv(std::ostream& out, const RobustnessReport& report);
RobustnessReport read_report_csv(std::istream& in);

// One row per (tag, beta, attack, eps) with a column per bit width, then
// quantize_gain and best.
void write_table_csv(std::ostream& out, const RobustnessReport& report);

// Shortest decimal text that parses back to the same double.
std::string format_number(double v);
double parse_number(const std::string& text);

}  // namespace dq
