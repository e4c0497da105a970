#include "dq/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "dq/error.hpp"

namespace dq {

double normalized_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("normalized_distance: size mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    num += d * d;
    den += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  }
  if (den == 0) throw DegenerateActivationError("normalized_distance: clean activation has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

AmplificationProfile layer_profile(const Model& model, const Tensor<float>& x, const Tensor<float>& x_adv,
                                   bool quant_on, double eps) {
  if (x.shape() != x_adv.shape()) throw ShapeError("layer_profile: clean and perturbed batches differ in shape");
  const auto clean = model.block_activations(x, quant_on);
  const auto perturbed = model.block_activations(x_adv, quant_on);
  AmplificationProfile p;
  p.layer_names = model.layer_names();
  p.eps = eps;
  p.quantized = quant_on;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    try {
      p.distances.push_back(normalized_distance(clean[i].data(), perturbed[i].data()));
    } catch (const DegenerateActivationError& e) {
      throw DegenerateActivationError(p.layer_names[i] + ": " + e.what());
    }
  }
  return p;
}

double evaluate(const Classifier& model, const Dataset& data, const std::optional<AttackConfig>& attack,
                std::size_t batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch_size must be positive");
  std::size_t correct = 0;
  for (std::size_t begin = 0, b = 0; begin < data.size(); begin += batch_size, ++b) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    Tensor<float> x = data.range_images(begin, count);
    const auto y = data.range_labels(begin, count);
    if (attack) x = run_attack(model, x, y, *attack, b);
    const auto pred = predict(model, x);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == y[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

int parse_int(const std::string& text) {
  int v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) throw FormatError("not an integer: '" + text + "'");
  return v;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::string format_number(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_number(const std::string& text) {
  double v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) throw FormatError("not a number: '" + text + "'");
  return v;
}

void write_profiles_csv(std::ostream& out, const std::vector<AmplificationProfile>& profiles) {
  out << "layer_index,layer_name,eps,quantized,distance\n";
  for (const auto& p : profiles) {
    if (p.layer_names.size() != p.distances.size()) throw std::invalid_argument("profile: length mismatch");
    for (std::size_t i = 0; i < p.distances.size(); ++i)
      out << i << ',' << p.layer_names[i] << ',' << format_number(p.eps) << ',' << (p.quantized ? 1 : 0) << ','
          << format_number(p.distances[i]) << '\n';
  }
}

std::vector<AmplificationProfile> read_profiles_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "layer_index,layer_name,eps,quantized,distance")
    throw FormatError("profile CSV: bad header");
  std::vector<AmplificationProfile> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw FormatError("profile CSV line " + std::to_string(lineno) + ": expected 5 fields");
    const int index = parse_int(f[0]);
    const double eps = parse_number(f[2]);
    const bool q = parse_int(f[3]) != 0;
    if (index == 0) out.push_back(AmplificationProfile{{}, {}, eps, q});
    if (out.empty() || static_cast<std::size_t>(index) != out.back().distances.size() || out.back().eps != eps ||
        out.back().quantized != q)
      throw FormatError("profile CSV line " + std::to_string(lineno) + ": rows out of order");
    out.back().layer_names.push_back(f[1]);
    out.back().distances.push_back(parse_number(f[4]));
  }
  return out;
}

std::vector<std::pair<std::string, double>> spectral_norms(const Model& model, int iters, std::uint64_t seed) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& nw : model.regularized_weights()) {
    const auto& w = nw.weight;
    const std::size_t rows = w.dim(0);
    Tensor<float> mat(Shape{rows, w.numel() / rows}, std::vector<float>(w.data().begin(), w.data().end()));
    out.emplace_back(nw.name, spectral_norm(mat, iters, seed));
  }
  return out;
}

void write_spectral_csv(std::ostream& out, const std::vector<std::pair<std::string, double>>& norms) {
  out << "layer_name,sigma_max\n";
  for (const auto& [name, s] : norms) out << name << ',' << format_number(s) << '\n';
}

std::optional<double> RobustnessReport::quantize_gain(const std::string& tag, double beta, const std::string& attack,
                                                      double eps) const {
  std::optional<double> fp, best;
  for (const auto& r : rows) {
    if (r.model_tag != tag || r.beta != beta || r.attack != attack || r.eps != eps || !r.accuracy) continue;
    if (r.bits == 0)
      fp = r.accuracy;
    else
      best = best ? std::max(*best, *r.accuracy) : *r.accuracy;
  }
  if (!fp || !best) return std::nullopt;
  return *best - *fp;
}

bool RobustnessReport::complete() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.accuracy.has_value(); });
}

void write_report_csv(std::ostream& out, const RobustnessReport& report) {
  out << "model_tag,bits,beta,attack,eps,accuracy\n";
  for (const auto& r : report.rows)
    out << r.model_tag << ',' << r.bits << ',' << format_number(r.beta) << ',' << r.attack << ','
        << format_number(r.eps) << ',' << (r.accuracy ? format_number(*r.accuracy) : "incomplete") << '\n';
}

RobustnessReport read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "model_tag,bits,beta,attack,eps,accuracy")
    throw FormatError("report CSV: bad header");
  RobustnessReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw FormatError("report CSV line " + std::to_string(lineno) + ": expected 6 fields");
    ReportRow r{f[0], parse_int(f[1]), parse_number(f[2]), f[3], parse_number(f[4]), std::nullopt};
    if (f[5] != "incomplete") r.accuracy = parse_number(f[5]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

void write_table_csv(std::ostream& out, const RobustnessReport& report) {
  std::vector<int> bits;
  using Key = std::tuple<std::string, double, std::string, double>;
  std::vector<Key> keys;
  std::map<std::pair<Key, int>, std::optional<double>> cell;
  for (const auto& r : report.rows) {
    if (std::find(bits.begin(), bits.end(), r.bits) == bits.end()) bits.push_back(r.bits);
    Key k{r.model_tag, r.beta, r.attack, r.eps};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    cell[{k, r.bits}] = r.accuracy;
  }
  std::sort(bits.begin(), bits.end());
  out << "model_tag,beta,attack,eps";
  for (int b : bits) out << ',' << (b == 0 ? std::string("full_precision") : "bits_" + std::to_string(b));
  out << ",quantize_gain,best\n";
  for (const auto& k : keys) {
    const auto& [tag, beta, attack, eps] = k;
    out << tag << ',' << format_number(beta) << ',' << attack << ',' << format_number(eps);
    std::optional<double> best;
    for (int b : bits) {
      const auto it = cell.find({k, b});
      out << ',';
      if (it == cell.end()) continue;
      if (!it->second) {
        out << "incomplete";
        continue;
      }
      out << format_number(*it->second);
      best = best ? std::max(*best, *it->second) : *it->second;
    }
    const auto gain = report.quantize_gain(tag, beta, attack, eps);
    out << ',' << (gain ? format_number(*gain) : "") << ',' << (best ? format_number(*best) : "") << '\n';
  }
}

}  // namespace dq
