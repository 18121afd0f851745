#include "tdpfed/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "tdpfed/errors.hpp"

namespace tdpfed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string real17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Parser {
 public:
  explicit Parser(const std::string& text) { parse(text); }
  SimConfig result() const { return config_; }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("line " + std::to_string(line_) + ": [" + section_ + "]." + key_ + ": " +
                      why);
  }

  std::uint64_t as_uint(const std::string& v) const {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
      fail("expected a non-negative integer, got '" + v + "'");
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      fail("integer out of range: '" + v + "'");
    }
  }

  double as_real(const std::string& v) const {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      fail("expected a number, got '" + v + "'");
    }
    if (used != v.size()) fail("expected a number, got '" + v + "'");
    return d;
  }

  bool as_bool(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("expected true or false, got '" + v + "'");
  }

  template <typename F>
  auto guarded(F&& f) const {
    try {
      return f();
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }

  LayerSpec as_layer(const std::string& v) const {
    const auto w = words(v);
    if (!w.empty() && w[0] == "linear" && w.size() == 4)
      return LayerSpec::linear(as_uint(w[1]), as_uint(w[2]), 1,
                               guarded([&] { return parse_activation(w[3]); }));
    if (!w.empty() && w[0] == "conv" && w.size() == 7)
      return LayerSpec::conv(as_uint(w[1]), as_uint(w[2]), as_uint(w[3]), as_uint(w[4]),
                             as_uint(w[5]), 1, guarded([&] { return parse_activation(w[6]); }));
    fail("expected 'linear IN OUT ACT' or 'conv HEIGHT WIDTH IN_CHANNELS WINDOW OUT_CHANNELS ACT'");
  }

  void assign(const std::string& v) {
    auto& c = config_;
    auto& d = c.data;
    auto& h = c.hyper;
    const std::string id = section_ + "." + key_;
    if (key_ != "layer" && !seen_.insert(id).second) fail("duplicate key");

    if (section_ == "experiment") {
      if (key_ == "seed") c.seed = as_uint(v);
      else if (key_ == "strategy") c.strategy = guarded([&] { return parse_strategy(v); });
      else if (key_ == "eval_every") c.eval_every = as_uint(v);
      else if (key_ == "als_iters") c.als_iters = as_uint(v);
      else if (key_ == "train_only_sampled") c.train_only_sampled = as_bool(v);
      else if (key_ == "record_wall_time") c.record_wall_time = as_bool(v);
      else if (key_ == "threads") c.threads = as_uint(v);
      else fail("unknown key");
    } else if (section_ == "data") {
      if (key_ == "source") {
        if (v == "synthetic") d.source = DataConfig::Source::synthetic;
        else if (v == "idx") d.source = DataConfig::Source::idx;
        else fail("expected synthetic or idx, got '" + v + "'");
      } else if (key_ == "train_images") d.train_images = v;
      else if (key_ == "train_labels") d.train_labels = v;
      else if (key_ == "test_images") d.test_images = v;
      else if (key_ == "test_labels") d.test_labels = v;
      else if (key_ == "classes") d.classes = as_uint(v);
      else if (key_ == "dim") d.dim = as_uint(v);
      else if (key_ == "train_per_class") d.train_per_class = as_uint(v);
      else if (key_ == "test_per_class") d.test_per_class = as_uint(v);
      else if (key_ == "separation") d.separation = as_real(v);
      else if (key_ == "classes_per_client") d.classes_per_client = as_uint(v);
      else fail("unknown key");
    } else if (section_ == "fl") {
      if (key_ == "K") c.clients = as_uint(v);
      else if (key_ == "S") c.sampled = as_uint(v);
      else if (key_ == "T") c.rounds = as_uint(v);
      else if (key_ == "tau") h.tau = as_uint(v);
      else if (key_ == "batch_size") h.batch_size = as_uint(v);
      else fail("unknown key");
    } else if (section_ == "opt") {
      if (key_ == "lambda") h.lambda = as_real(v);
      else if (key_ == "beta") c.beta = as_real(v);
      else if (key_ == "eta") h.eta = as_real(v);
      else if (key_ == "eta_p") h.eta_p = as_real(v);
      else if (key_ == "s") h.s = as_uint(v);
      else if (key_ == "s_prime") h.s_prime = as_uint(v);
      else if (key_ == "momentum") h.momentum = as_real(v);
      else if (key_ == "nu") h.nu = as_real(v);
      else if (key_ == "personalized_optimizer")
        h.personalized_optimizer = guarded([&] { return parse_optimizer(v); });
      else if (key_ == "factor_optimizer")
        h.factor_optimizer = guarded([&] { return parse_optimizer(v); });
      else fail("unknown key");
    } else if (section_ == "model") {
      if (key_ == "preset") {
        if (v != "dnn") fail("unknown preset '" + v + "'");
      } else if (key_ == "target_cr") {
        target_cr_ = as_real(v);
        if (!(*target_cr_ > 0.0)) fail("must be > 0");
      } else if (key_ == "ranks") {
        ranks_.clear();
        for (const auto& r : split(v, ',')) ranks_.push_back(as_uint(r));
        ranks_line_ = line_;
      } else if (key_ == "layer") {
        layers_.push_back(as_layer(v));
      } else {
        fail("unknown key");
      }
    } else {
      fail("unknown section");
    }
  }

  void parse(const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    while (std::getline(in, raw)) {
      ++line_;
      key_.clear();
      std::string s = raw;
      if (auto hash = s.find('#'); hash != std::string::npos) s.resize(hash);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') fail("unterminated section header");
        section_ = trim(s.substr(1, s.size() - 2));
        static const std::set<std::string> known{"experiment", "data", "fl", "opt", "model"};
        if (!known.count(section_)) fail("unknown section");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) fail("expected key = value");
      key_ = trim(s.substr(0, eq));
      if (section_.empty()) fail("key outside of any section");
      assign(trim(s.substr(eq + 1)));
    }
    resolve_model();
  }

  void resolve_model() {
    ModelSpec spec = layers_.empty() ? dnn_spec(1, 1) : ModelSpec{layers_};
    if (!ranks_.empty()) {
      line_ = ranks_line_;
      section_ = "model";
      key_ = "ranks";
      if (ranks_.size() != spec.layers.size())
        fail(std::to_string(ranks_.size()) + " ranks given for " +
             std::to_string(spec.layers.size()) + " layers");
      for (std::size_t l = 0; l < spec.layers.size(); ++l) spec.layers[l].rank = ranks_[l];
    } else {
      const double cr = target_cr_.value_or(2.0);
      for (auto& layer : spec.layers) layer.rank = rank_for_target_cr(layer, cr);
    }
    config_.model = spec;
  }

  SimConfig config_;
  std::size_t line_ = 0;
  std::string section_;
  std::string key_;
  std::set<std::string> seen_;
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> ranks_;
  std::size_t ranks_line_ = 0;
  std::optional<double> target_cr_;
};

}  // namespace

SimConfig parse_config(const std::string& text) { return Parser(text).result(); }

SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const SimConfig& c) {
  std::ostringstream o;
  const auto& d = c.data;
  const auto& h = c.hyper;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[experiment]\n"
    << "seed = " << c.seed << "\n"
    << "strategy = " << to_string(c.strategy) << "\n"
    << "eval_every = " << c.eval_every << "\n"
    << "als_iters = " << c.als_iters << "\n"
    << "train_only_sampled = " << b(c.train_only_sampled) << "\n"
    << "record_wall_time = " << b(c.record_wall_time) << "\n"
    << "threads = " << c.threads << "\n\n";
  o << "[data]\n"
    << "source = " << (d.source == DataConfig::Source::idx ? "idx" : "synthetic") << "\n";
  if (!d.train_images.empty()) o << "train_images = " << d.train_images << "\n";
  if (!d.train_labels.empty()) o << "train_labels = " << d.train_labels << "\n";
  if (!d.test_images.empty()) o << "test_images = " << d.test_images << "\n";
  if (!d.test_labels.empty()) o << "test_labels = " << d.test_labels << "\n";
  o << "classes = " << d.classes << "\n"
    << "dim = " << d.dim << "\n"
    << "train_per_class = " << d.train_per_class << "\n"
    << "test_per_class = " << d.test_per_class << "\n"
    << "separation = " << real17(d.separation) << "\n"
    << "classes_per_client = " << d.classes_per_client << "\n\n";
  o << "[fl]\n"
    << "K = " << c.clients << "\n"
    << "S = " << c.sampled << "\n"
    << "T = " << c.rounds << "\n"
    << "tau = " << h.tau << "\n"
    << "batch_size = " << h.batch_size << "\n\n";
  o << "[opt]\n"
    << "lambda = " << real17(h.lambda) << "\n"
    << "beta = " << real17(c.beta) << "\n"
    << "eta = " << real17(h.eta) << "\n"
    << "eta_p = " << real17(h.eta_p) << "\n"
    << "s = " << h.s << "\n"
    << "s_prime = " << h.s_prime << "\n"
    << "momentum = " << real17(h.momentum) << "\n"
    << "nu = " << real17(h.nu) << "\n"
    << "personalized_optimizer = " << to_string(h.personalized_optimizer) << "\n"
    << "factor_optimizer = " << to_string(h.factor_optimizer) << "\n\n";
  o << "[model]\n";
  std::string ranks;
  for (const auto& l : c.model.layers) {
    if (l.kind == LayerKind::linear)
      o << "layer = linear " << l.dense_shape[1] << " " << l.dense_shape[0] << " "
        << to_string(l.activation) << "\n";
    else
      o << "layer = conv " << l.in_height << " " << l.in_width << " " << l.dense_shape[2] << " "
        << l.dense_shape[0] << " " << l.dense_shape[3] << " " << to_string(l.activation) << "\n";
    ranks += (ranks.empty() ? "" : ",") + std::to_string(l.rank);
  }
  o << "ranks = " << ranks << "\n";
  return o.str();
}

}  // namespace tdpfed
