// SPDX-License-Identifier: Apache-2.0
#include "macd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace macd {

std::string_view name(Architecture a) { return a == Architecture::Macd ? "macd" : "aux_concat"; }
std::string_view name(IrgScope s) { return s == IrgScope::Batch ? "batch" : "catalog"; }
std::string_view name(TrainCutoff c) { return c == TrainCutoff::Random ? "random" : "last"; }

namespace {

[[noreturn]] void bad_value(const std::string& field, const std::string& value, const std::string& expected) {
  throw std::invalid_argument("config field '" + field + "': cannot use '" + value + "' (" + expected + ")");
}

int parse_int(const std::string& field, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(field, v, "expected an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& field, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(field, v, "expected an unsigned integer");
  return out;
}

double parse_double(const std::string& field, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad_value(field, v, "expected a number");
  }
  if (used != v.size()) bad_value(field, v, "expected a number");
  return out;
}

bool parse_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(field, v, "expected true or false");
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
ConfigField int_field(std::string name, std::string help, T TrainConfig::*m, bool training = true) {
  return {name, std::move(help), [m](const TrainConfig& c) { return std::to_string(c.*m); },
          [m, name](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, int>) {
              c.*m = parse_int(name, v);
            } else {
              c.*m = parse_u64(name, v);
            }
          },
          training};
}

ConfigField double_field(std::string name, std::string help, double TrainConfig::*m) {
  return {name, std::move(help), [m](const TrainConfig& c) { return format_double(c.*m); },
          [m, name](TrainConfig& c, const std::string& v) { c.*m = parse_double(name, v); }, true};
}

ConfigField bool_field(std::string name, std::string help, bool TrainConfig::*m, bool training = true) {
  return {name, std::move(help), [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m, name](TrainConfig& c, const std::string& v) { c.*m = parse_bool(name, v); }, training};
}

std::vector<ConfigField> make_fields() {
  std::vector<ConfigField> f;
  f.push_back(int_field("d", "embedding dimension", &TrainConfig::d));
  f.push_back(int_field("T", "maximum target sequence length", &TrainConfig::T));
  f.push_back(int_field("T_prime", "maximum auxiliary sequence length", &TrainConfig::T_prime));
  f.push_back(int_field("h", "attention heads", &TrainConfig::h));
  f.push_back(double_field("tau", "contrastive temperature", &TrainConfig::tau));
  f.push_back(double_field("lambda", "weight of the contrastive term", &TrainConfig::lambda));
  f.push_back(int_field("batch_size", "users per training batch", &TrainConfig::batch_size));
  f.push_back(int_field("epochs", "training epochs", &TrainConfig::epochs));
  f.push_back(double_field("learning_rate", "Adam step size", &TrainConfig::learning_rate));
  f.push_back({"backbone", "sequence encoder: mean_pool, recurrent or self_attentive",
               [](const TrainConfig& c) { return std::string(name(c.backbone)); },
               [](TrainConfig& c, const std::string& v) { c.backbone = parse_encoder_kind(v); }, true});
  f.push_back(bool_field("iddm", "intra-domain denoising module", &TrainConfig::iddm));
  f.push_back(bool_field("cddm", "cross-domain denoising module", &TrainConfig::cddm));
  f.push_back(bool_field("cl", "contrastive regularizer", &TrainConfig::cl));
  f.push_back(bool_field("fgu", "fusion gate unit", &TrainConfig::fgu));
  f.push_back(bool_field("irg", "inductive representation generator (inference only)", &TrainConfig::irg, false));
  f.push_back(int_field("rng_seed", "random seed", &TrainConfig::rng_seed));
  f.push_back(bool_field("strict_eq7", "contrastive denominator without the positive pair", &TrainConfig::strict_eq7));
  f.push_back({"architecture", "macd or aux_concat",
               [](const TrainConfig& c) { return std::string(name(c.architecture)); },
               [](TrainConfig& c, const std::string& v) {
                 if (v == "macd") {
                   c.architecture = Architecture::Macd;
                 } else if (v == "aux_concat") {
                   c.architecture = Architecture::AuxConcat;
                 } else {
                   bad_value("architecture", v, "expected macd or aux_concat");
                 }
               },
               true});
  f.push_back(bool_field("share_encoders", "one encoder per domain for both streams", &TrainConfig::share_encoders));
  f.push_back(int_field("negatives_per_positive", "sampled BCE negatives per positive",
                        &TrainConfig::negatives_per_positive));
  f.push_back(int_field("eval_negatives", "sampled negatives per ranking task", &TrainConfig::eval_negatives, false));
  f.push_back(int_field("eval_batch_size", "users per inference batch", &TrainConfig::eval_batch_size, false));
  f.push_back({"irg_scope", "donor pool for cold-start users: batch or catalog",
               [](const TrainConfig& c) { return std::string(name(c.irg_scope)); },
               [](TrainConfig& c, const std::string& v) {
                 if (v == "batch") {
                   c.irg_scope = IrgScope::Batch;
                 } else if (v == "catalog") {
                   c.irg_scope = IrgScope::Catalog;
                 } else {
                   bad_value("irg_scope", v, "expected batch or catalog");
                 }
               },
               false});
  f.push_back({"train_cutoff", "training label position: random or last",
               [](const TrainConfig& c) { return std::string(name(c.train_cutoff)); },
               [](TrainConfig& c, const std::string& v) {
                 if (v == "random") {
                   c.train_cutoff = TrainCutoff::Random;
                 } else if (v == "last") {
                   c.train_cutoff = TrainCutoff::Last;
                 } else {
                   bad_value("train_cutoff", v, "expected random or last");
                 }
               },
               true});
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  const auto fail = [](const std::string& m) { throw std::invalid_argument("invalid config: " + m); };
  if (d < 1) fail("d must be positive");
  if (h < 1 || d % h != 0) fail("d must be divisible by h");
  if (T < 1) fail("T must be positive");
  if (T_prime < T) fail("T_prime must be >= T");
  if (!(tau > 0)) fail("tau must be positive");
  if (!(lambda >= 0 && lambda <= 1)) fail("lambda must lie in [0, 1]");
  if (batch_size < 1) fail("batch_size must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (negatives_per_positive < 1) fail("negatives_per_positive must be positive");
  if (eval_negatives < 1) fail("eval_negatives must be positive");
  if (eval_batch_size < 1) fail("eval_batch_size must be positive");
}

bool TrainConfig::contrastive_active() const {
  return architecture == Architecture::Macd && cl && iddm && cddm;
}

double TrainConfig::effective_lambda() const { return contrastive_active() ? lambda : 0.0; }

TrainConfig desk_preset() {
  TrainConfig c;
  c.d = 32;
  c.T = 20;
  c.T_prime = 50;
  c.h = 4;
  c.batch_size = 16;
  c.epochs = 80;
  c.learning_rate = 3e-3;
  c.eval_negatives = 99;
  c.irg_scope = IrgScope::Catalog;
  return c;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = make_fields();
  return fields;
}

void set_config_field(TrainConfig& c, const std::string& field, const std::string& value) {
  for (const auto& f : config_fields()) {
    if (f.name == field) {
      f.set(c, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config field '" + field + "'");
}

std::string config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& f : config_fields()) {
    const std::string v = f.get(c);
    const auto probe = nlohmann::json::parse(v, nullptr, false);
    if (!probe.is_discarded() && (probe.is_number() || probe.is_boolean())) {
      j[f.name] = probe;
    } else {
      j[f.name] = v;
    }
  }
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text, TrainConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string v;
    if (value.is_string()) {
      v = value.get<std::string>();
    } else if (value.is_boolean()) {
      v = value.get<bool>() ? "true" : "false";
    } else if (value.is_number_unsigned()) {
      v = std::to_string(value.get<std::uint64_t>());
    } else if (value.is_number_integer()) {
      v = std::to_string(value.get<std::int64_t>());
    } else if (value.is_number_float()) {
      v = format_double(value.get<double>());
    } else {
      throw std::invalid_argument("config field '" + key + "' has an unsupported type");
    }
    set_config_field(base, key, v);
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str(), base);
}

std::uint64_t config_fingerprint(const TrainConfig& c, int n_items_x, int n_items_y) {
  std::string canonical;
  for (const auto& f : config_fields()) {
    if (!f.affects_training) continue;
    canonical += f.name + "=" + f.get(c) + ";";
  }
  canonical += "n_items_x=" + std::to_string(n_items_x) + ";n_items_y=" + std::to_string(n_items_y) + ";";
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char ch : canonical) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  std::uint64_t x = seed;
  for (unsigned char ch : tag) x = (x ^ ch) * 1099511628211ULL;
  x ^= index + 0x9e3779b97f4a7c15ULL;
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace macd
