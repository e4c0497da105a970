#include "dq/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dq/analysis.hpp"
#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_number(v);
  } catch (const FormatError&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long n = to_integer(key, v);
  if (n < 0) throw ConfigError(key, "must be non-negative");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <typename F>
auto rethrow_as(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

std::string numbers(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double d : v) s.push_back(format_number(d));
  return join(s);
}

template <typename I>
std::string integers(const std::vector<I>& v) {
  std::vector<std::string> s;
  for (auto d : v) s.push_back(std::to_string(d));
  return join(s);
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_count("seed", v)); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},

      {"data.source",
       [](RunConfig& c, const std::string& v) {
         if (v != "synthetic" && v != "cifar10") throw ConfigError("data.source", "expected synthetic or cifar10");
         c.data.source = v;
       },
       [](const RunConfig& c) { return c.data.source; }},
      {"data.train_path", [](RunConfig& c, const std::string& v) { c.data.train_path = v; },
       [](const RunConfig& c) { return c.data.train_path.string(); }},
      {"data.test_path", [](RunConfig& c, const std::string& v) { c.data.test_path = v; },
       [](const RunConfig& c) { return c.data.test_path.string(); }},
      {"data.train_limit", [](RunConfig& c, const std::string& v) { c.data.train_limit = to_count("data.train_limit", v); },
       [](const RunConfig& c) { return std::to_string(c.data.train_limit); }},
      {"data.test_limit", [](RunConfig& c, const std::string& v) { c.data.test_limit = to_count("data.test_limit", v); },
       [](const RunConfig& c) { return std::to_string(c.data.test_limit); }},
      {"data.downsample", [](RunConfig& c, const std::string& v) { c.data.downsample = to_bool("data.downsample", v); },
       [](const RunConfig& c) { return std::string(c.data.downsample ? "true" : "false"); }},
      {"data.synth.separation",
       [](RunConfig& c, const std::string& v) { c.data.synth_separation = to_double("data.synth.separation", v); },
       [](const RunConfig& c) { return format_number(c.data.synth_separation); }},
      {"data.synth.noise", [](RunConfig& c, const std::string& v) { c.data.synth_noise = to_double("data.synth.noise", v); },
       [](const RunConfig& c) { return format_number(c.data.synth_noise); }},
      {"data.synth.smooth", [](RunConfig& c, const std::string& v) { c.data.synth_smooth = to_count("data.synth.smooth", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_smooth); }},
      {"data.synth.shift", [](RunConfig& c, const std::string& v) { c.data.synth_shift = to_count("data.synth.shift", v); },
       [](const RunConfig& c) { return std::to_string(c.data.synth_shift); }},
      {"data.synth.contrast",
       [](RunConfig& c, const std::string& v) { c.data.synth_contrast = to_double("data.synth.contrast", v); },
       [](const RunConfig& c) { return format_number(c.data.synth_contrast); }},

      {"model.blocks",
       [](RunConfig& c, const std::string& v) {
         c.model.blocks = rethrow_as("model.blocks", [&] { return parse_blocks(v); });
       },
       [](const RunConfig& c) { return format_blocks(c.model.blocks); }},
      {"model.classes", [](RunConfig& c, const std::string& v) { c.model.num_classes = to_count("model.classes", v); },
       [](const RunConfig& c) { return std::to_string(c.model.num_classes); }},

      {"quant.mode",
       [](RunConfig& c, const std::string& v) { c.model.quant.mode = rethrow_as("quant.mode", [&] { return parse_quant_mode(v); }); },
       [](const RunConfig& c) { return std::string(to_string(c.model.quant.mode)); }},
      {"quant.bits", [](RunConfig& c, const std::string& v) { c.model.quant.bits = static_cast<int>(to_integer("quant.bits", v)); },
       [](const RunConfig& c) { return std::to_string(c.model.quant.bits); }},
      {"quant.range_max", [](RunConfig& c, const std::string& v) { c.model.quant.range_max = to_double("quant.range_max", v); },
       [](const RunConfig& c) { return format_number(c.model.quant.range_max); }},

      {"reg.beta", [](RunConfig& c, const std::string& v) { c.model.reg.beta = to_double("reg.beta", v); },
       [](const RunConfig& c) { return format_number(c.model.reg.beta); }},
      {"reg.aggregation",
       [](RunConfig& c, const std::string& v) {
         c.model.reg.aggregation = rethrow_as("reg.aggregation", [&] { return parse_aggregation(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.model.reg.aggregation)); }},
      {"reg.apply_to",
       [](RunConfig& c, const std::string& v) {
         c.model.reg.apply_to = v == "all" ? std::vector<std::string>{} : split_list(v);
       },
       [](const RunConfig& c) { return c.model.reg.apply_to.empty() ? std::string("all") : join(c.model.reg.apply_to); }},

      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = static_cast<int>(to_integer("train.epochs", v)); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double("train.lr", v); },
       [](const RunConfig& c) { return format_number(c.train.lr); }},
      {"train.decay", [](RunConfig& c, const std::string& v) { c.train.decay = to_double("train.decay", v); },
       [](const RunConfig& c) { return format_number(c.train.decay); }},
      {"train.milestones",
       [](RunConfig& c, const std::string& v) {
         c.train.milestones.clear();
         for (const auto& m : split_list(v)) c.train.milestones.push_back(static_cast<int>(to_integer("train.milestones", m)));
       },
       [](const RunConfig& c) { return integers(c.train.milestones); }},
      {"train.momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = to_double("train.momentum", v); },
       [](const RunConfig& c) { return format_number(c.train.momentum); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_count("train.batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.augment", [](RunConfig& c, const std::string& v) { c.train.augment = to_bool("train.augment", v); },
       [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); }},

      {"attack.kind",
       [](RunConfig& c, const std::string& v) { c.attack.kind = rethrow_as("attack.kind", [&] { return parse_attack_kind(v); }); },
       [](const RunConfig& c) { return std::string(to_string(c.attack.kind)); }},
      {"attack.eps", [](RunConfig& c, const std::string& v) { c.attack.epsilon = to_double("attack.eps", v); },
       [](const RunConfig& c) { return format_number(c.attack.epsilon); }},
      {"attack.alpha", [](RunConfig& c, const std::string& v) { c.attack.alpha = to_double("attack.alpha", v); },
       [](const RunConfig& c) { return format_number(c.attack.alpha); }},
      {"attack.iters",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto")
           c.attack.iters.reset();
         else
           c.attack.iters = static_cast<int>(to_integer("attack.iters", v));
       },
       [](const RunConfig& c) { return c.attack.iters ? std::to_string(*c.attack.iters) : std::string("auto"); }},

      {"advtrain.method",
       [](RunConfig& c, const std::string& v) {
         c.advtrain_enabled = v != "none";
         if (c.advtrain_enabled) c.advtrain.method = rethrow_as("advtrain.method", [&] { return parse_adv_method(v); });
       },
       [](const RunConfig& c) { return c.advtrain_enabled ? std::string(to_string(c.advtrain.method)) : std::string("none"); }},
      {"advtrain.delta", [](RunConfig& c, const std::string& v) { c.advtrain.delta = to_double("advtrain.delta", v); },
       [](const RunConfig& c) { return format_number(c.advtrain.delta); }},
      {"advtrain.mix", [](RunConfig& c, const std::string& v) { c.advtrain.mix = to_double("advtrain.mix", v); },
       [](const RunConfig& c) { return format_number(c.advtrain.mix); }},
      {"advtrain.test_eps", [](RunConfig& c, const std::string& v) { c.advtrain.test_eps = to_double("advtrain.test_eps", v); },
       [](const RunConfig& c) { return format_number(c.advtrain.test_eps); }},

      {"defense.squeeze.bits",
       [](RunConfig& c, const std::string& v) { c.squeeze.color_bits = static_cast<int>(to_integer("defense.squeeze.bits", v)); },
       [](const RunConfig& c) { return std::to_string(c.squeeze.color_bits); }},
      {"defense.squeeze.median",
       [](RunConfig& c, const std::string& v) { c.squeeze.median = to_bool("defense.squeeze.median", v); },
       [](const RunConfig& c) { return std::string(c.squeeze.median ? "true" : "false"); }},

      {"sweep.bits",
       [](RunConfig& c, const std::string& v) {
         c.sweep.bits.clear();
         for (const auto& b : split_list(v)) c.sweep.bits.push_back(static_cast<int>(to_integer("sweep.bits", b)));
       },
       [](const RunConfig& c) { return integers(c.sweep.bits); }},
      {"sweep.betas",
       [](RunConfig& c, const std::string& v) {
         c.sweep.betas.clear();
         for (const auto& b : split_list(v)) c.sweep.betas.push_back(to_double("sweep.betas", b));
       },
       [](const RunConfig& c) { return numbers(c.sweep.betas); }},
      {"sweep.attacks",
       [](RunConfig& c, const std::string& v) {
         c.sweep.attacks.clear();
         for (const auto& a : split_list(v))
           c.sweep.attacks.push_back(rethrow_as("sweep.attacks", [&] { return parse_sweep_attack(a); }));
       },
       [](const RunConfig& c) {
         std::vector<std::string> s;
         for (const auto& a : c.sweep.attacks) s.push_back(a.label());
         return join(s);
       }},

      {"analyze.eps",
       [](RunConfig& c, const std::string& v) {
         c.analyze_eps.clear();
         for (const auto& e : split_list(v)) c.analyze_eps.push_back(to_double("analyze.eps", e));
       },
       [](const RunConfig& c) { return numbers(c.analyze_eps); }},
  };
  return table;
}

}  // namespace

std::string SweepAttack::label() const {
  return std::string(transfer ? "bb-" : "") + to_string(kind) + ":" + format_number(eps);
}

SweepAttack parse_sweep_attack(const std::string& text) {
  SweepAttack a;
  std::string kind = text;
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    kind = text.substr(0, colon);
    a.eps = parse_number(text.substr(colon + 1));
  }
  if (kind.rfind("bb-", 0) == 0) {
    a.transfer = true;
    kind = kind.substr(3);
  }
  a.kind = parse_attack_kind(kind);
  if (!(a.eps >= 0 && a.eps <= 255)) throw std::invalid_argument("attack budget must be in [0,255]");
  return a;
}

RunConfig::RunConfig() {
  model = ModelSpec::desk_default({3, 16, 16});
  train.epochs = 20;
  train.milestones = {6, 12, 16};
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  throw ConfigError(key, "unknown key");
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(*this) << '\n';
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void RunConfig::validate() const {
  if (data.source == "cifar10") {
    if (data.train_path.empty()) throw ConfigError("data.train_path", "required when data.source = cifar10");
    if (data.test_path.empty()) throw ConfigError("data.test_path", "required when data.source = cifar10");
  }
  if (data.train_limit < model.num_classes) throw ConfigError("data.train_limit", "need at least one image per class");
  if (data.test_limit < 1) throw ConfigError("data.test_limit", "must be positive");
  if (data.source == "synthetic") {
    if (!(data.synth_separation > 0)) throw ConfigError("data.synth.separation", "must be positive");
    if (!(data.synth_noise > 0)) throw ConfigError("data.synth.noise", "must be positive");
    if (!(data.synth_contrast >= 0 && data.synth_contrast < 1)) throw ConfigError("data.synth.contrast", "must be in [0,1)");
  }
  if (model.blocks.empty()) throw ConfigError("model.blocks", "need at least one block");
  if (model.num_classes < 2 || model.num_classes > 256) throw ConfigError("model.classes", "must be in [2,256]");
  rethrow_as("quant.bits", [&] { model.quant.validate(); });
  rethrow_as("reg.beta", [&] { model.reg.validate(); });
  rethrow_as("model.blocks", [&] { model_spec().validate(); });
  if (train.epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  train.validate();
  rethrow_as("attack.eps", [&] { attack.validate(); });
  rethrow_as("advtrain.delta", [&] { advtrain.validate(); });
  rethrow_as("defense.squeeze.bits", [&] { squeeze.validate(); });
  if (sweep.bits.empty()) throw ConfigError("sweep.bits", "grid must be nonempty");
  for (int b : sweep.bits)
    if (b < 0 || b > 8) throw ConfigError("sweep.bits", "bit widths must be in [0,8] (0 is full precision)");
  if (sweep.betas.empty()) throw ConfigError("sweep.betas", "grid must be nonempty");
  for (double b : sweep.betas)
    if (!(b >= 0)) throw ConfigError("sweep.betas", "must be non-negative");
  if (analyze_eps.empty()) throw ConfigError("analyze.eps", "need at least one budget");
  for (double e : analyze_eps)
    if (!(e >= 0 && e <= 255)) throw ConfigError("analyze.eps", "budgets must be in [0,255]");
}

ImageShape RunConfig::input_shape() const {
  return data.downsample ? ImageShape{3, 16, 16} : ImageShape{3, 32, 32};
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec s = model;
  s.input = input_shape();
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, "train");
  return t;
}

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(trim(line), "line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  return parse_config(in);
}

DataSplits load_data(const RunConfig& cfg) {
  DataSplits out;
  const std::size_t k = cfg.model.num_classes;
  if (cfg.data.source == "cifar10") {
    out.train = load_cifar10_binary(cfg.data.train_path, cfg.data.train_limit, {3, 32, 32}, "train");
    out.test = load_cifar10_binary(cfg.data.test_path, cfg.data.test_limit, {3, 32, 32}, "test");
    out.train.num_classes = out.test.num_classes = k;
    out.train.validate();
    out.test.validate();
  } else {
    SynthOptions opts;
    opts.noise = cfg.data.synth_noise;
    opts.smooth_radius = cfg.data.synth_smooth;
    opts.max_shift = cfg.data.synth_shift;
    opts.contrast_jitter = cfg.data.synth_contrast;
    const auto seed = derive_seed(cfg.seed, "data");
    out.train = synth_blobs(k, cfg.data.train_limit / k, {3, 32, 32}, cfg.data.synth_separation, seed, opts);
    opts.split = "test";
    out.test = synth_blobs(k, std::max<std::size_t>(cfg.data.test_limit / k, 1), {3, 32, 32},
                           cfg.data.synth_separation, seed, opts);
  }
  if (cfg.data.downsample) {
    out.train = downsample2x(out.train);
    out.test = downsample2x(out.test);
  }
  return out;
}

}  // namespace dq
