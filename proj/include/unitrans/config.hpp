#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>

#include "unitrans/errors.hpp"
#include "unitrans/losses.hpp"

namespace unitrans {

enum class TrainMode { joint, sequential };

struct TrainConfig {
  int num_domains = 10;  // preset cluster count
  int resolution = 128;
  int batch_size = 32;
  std::int64_t guiding_iters = 65000;
  std::int64_t joint_iters = 100000;

  double lr = 1e-4;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double rmsprop_alpha = 0.99;

  LossWeights weights;
  std::string adversarial = "hinge";  // hinge | log

  double temperature = 0.07;
  int queue_size = 1024;
  double momentum = 0.999;
  double ema_decay = 0.999;

  std::string mode = "joint";  // joint | sequential
  bool e_feedback = true;
  double gamma_label = 0.0;  // labeled fraction for semi-supervised training
  std::uint64_t seed = 0;

  int channels_e = 64;
  int channels_g = 64;
  int channels_d = 64;
  int style_dim = 128;

  // Data source: a folder layout, or synthetic data when data_root is empty.
  std::string data_root;
  int synthetic_domains = 3;
  int synthetic_samples = 300;

  std::int64_t log_every = 10;
  std::int64_t eval_every = 0;  // 0 disables periodic evaluation
  std::int64_t checkpoint_every = 1000;

  std::int64_t total_iters() const { return guiding_iters + joint_iters; }
  TrainMode train_mode() const { return mode == "sequential" ? TrainMode::sequential : TrainMode::joint; }
  AdversarialForm adversarial_form() const { return adversarial == "log" ? AdversarialForm::log : AdversarialForm::hinge; }
};

namespace detail {

using FieldRef = std::variant<int*, std::int64_t*, std::uint64_t*, double*, bool*, std::string*>;

template <typename Cfg, typename F>
void visit_config_fields(Cfg& c, F&& f) {
  f("num_domains", &c.num_domains);
  f("resolution", &c.resolution);
  f("batch_size", &c.batch_size);
  f("guiding_iters", &c.guiding_iters);
  f("joint_iters", &c.joint_iters);
  f("lr", &c.lr);
  f("weight_decay", &c.weight_decay);
  f("adam_beta1", &c.adam_beta1);
  f("adam_beta2", &c.adam_beta2);
  f("rmsprop_alpha", &c.rmsprop_alpha);
  f("lambda_rec", &c.weights.rec);
  f("lambda_style_g", &c.weights.style_g);
  f("lambda_style_e_guiding", &c.weights.style_e_guiding);
  f("lambda_style_e_joint", &c.weights.style_e_joint);
  f("lambda_mi_guiding", &c.weights.mi_guiding);
  f("lambda_mi_joint", &c.weights.mi_joint);
  f("lambda_ce", &c.weights.ce);
  f("r1_gamma", &c.weights.r1_gamma);
  f("adversarial", &c.adversarial);
  f("temperature", &c.temperature);
  f("queue_size", &c.queue_size);
  f("momentum", &c.momentum);
  f("ema_decay", &c.ema_decay);
  f("mode", &c.mode);
  f("e_feedback", &c.e_feedback);
  f("gamma_label", &c.gamma_label);
  f("seed", &c.seed);
  f("channels_e", &c.channels_e);
  f("channels_g", &c.channels_g);
  f("channels_d", &c.channels_d);
  f("style_dim", &c.style_dim);
  f("data_root", &c.data_root);
  f("synthetic_domains", &c.synthetic_domains);
  f("synthetic_samples", &c.synthetic_samples);
  f("log_every", &c.log_every);
  f("eval_every", &c.eval_every);
  f("checkpoint_every", &c.checkpoint_every);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

inline void assign_field(const std::string& key, FieldRef ref, std::string text) {
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = text.substr(1, text.size() - 2);
  std::visit(
      [&](auto* p) {
        using V = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<V, std::string>) {
          *p = text;
        } else if constexpr (std::is_same_v<V, bool>) {
          if (text == "true" || text == "1") *p = true;
          else if (text == "false" || text == "0") *p = false;
          else throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
        } else {
          *p = parse_number<V>(key, text);
        }
      },
      ref);
}

}  // namespace detail

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.num_domains < 1) fail("num_domains must be >= 1");
  if (c.resolution < 32 || c.resolution % 32 != 0) fail("resolution must be a positive multiple of 32");
  if (c.batch_size < 2) fail("batch_size must be >= 2 (references are paired within a batch)");
  if (c.guiding_iters < 0 || c.joint_iters < 0) fail("iteration counts must be nonnegative");
  if (c.gamma_label < 0.0 || c.gamma_label > 1.0) fail("gamma_label must lie in [0,1]");
  if (c.mode != "joint" && c.mode != "sequential") fail("mode must be joint or sequential, got '" + c.mode + "'");
  if (c.adversarial != "hinge" && c.adversarial != "log") fail("adversarial must be hinge or log");
  if (c.temperature <= 0.0) fail("temperature must be positive");
  if (c.queue_size < 1) fail("queue_size must be >= 1");
  if (c.momentum < 0.0 || c.momentum > 1.0) fail("momentum must lie in [0,1]");
  if (c.ema_decay < 0.0 || c.ema_decay > 1.0) fail("ema_decay must lie in [0,1]");
  for (double w : {c.weights.rec, c.weights.style_g, c.weights.style_e_guiding, c.weights.style_e_joint,
                   c.weights.mi_guiding, c.weights.mi_joint, c.weights.ce, c.weights.r1_gamma})
    if (w < 0.0) fail("loss weights must be nonnegative");
  if (c.channels_e < 1 || c.channels_g < 1 || c.channels_d < 1 || c.style_dim < 1) fail("channel counts must be >= 1");
}

// Applies one `key = value` assignment; unknown keys are errors.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  detail::visit_config_fields(c, [&](const char* name, auto* field) {
    if (key == name) {
      detail::assign_field(key, detail::FieldRef(field), detail::trim(value));
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

// Flat `key = value` text; '#' starts a comment, blank lines are ignored.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  auto cfg = parse_config(ss.str());
  validate(cfg);
  return cfg;
}

inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  detail::visit_config_fields(c, [&](const char* name, const auto* field) {
    using V = std::remove_cvref_t<decltype(*field)>;
    out << name << " = ";
    if constexpr (std::is_same_v<V, std::string>) out << '"' << *field << '"';
    else if constexpr (std::is_same_v<V, bool>) out << (*field ? "true" : "false");
    else out << *field;
    out << '\n';
  });
  return out.str();
}

// Reduced preset that trains end to end on one CPU core.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.num_domains = 3;
  c.resolution = 64;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.guiding_iters = 1000;
  c.joint_iters = 2000;
  c.channels_e = 8;
  c.channels_g = 8;
  c.channels_d = 8;
  c.queue_size = 256;
  c.momentum = 0.99;
  c.ema_decay = 0.995;
  c.synthetic_domains = 3;
  c.synthetic_samples = 300;
  c.log_every = 50;
  c.eval_every = 250;
  c.checkpoint_every = 1000;
  return c;
}

}  // namespace unitrans
