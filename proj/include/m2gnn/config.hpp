#pragma once

#include <map>
#include <string>
#include <string_view>

#include "m2gnn/dataset.hpp"
#include "m2gnn/error.hpp"
#include "m2gnn/model.hpp"
#include "m2gnn/training.hpp"

namespace m2gnn {

// Hyperparameters of one run, settable from a `key = value` file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // `seed` drives both parameter init/sampling and routing-logit init.
  void set_seed(std::uint64_t s) {
    model.seed = s;
    train.seed = s;
  }

  void apply(std::string_view key, std::string_view value) {
    auto num = [&](auto& dst) {
      using T = std::remove_reference_t<decltype(dst)>;
      const auto v = detail::parse_number<T>(value);
      if (!v) throw ValidationError("bad value '" + std::string(value) + "' for " + std::string(key));
      dst = *v;
    };
    auto flag = [&](bool& dst) {
      if (value == "true" || value == "1" || value == "on") dst = true;
      else if (value == "false" || value == "0" || value == "off") dst = false;
      else throw ValidationError("bad boolean '" + std::string(value) + "' for " + std::string(key));
    };
    if (key == "d" || key == "dim") num(model.dim);
    else if (key == "layers" || key == "L") num(model.layers);
    else if (key == "k_max") num(model.k_max);
    else if (key == "gamma") num(model.gamma);
    else if (key == "routing_iters") num(model.routing_iters);
    else if (key == "neighbor_cap") num(model.neighbor_cap);
    else if (key == "pad_mask") flag(model.pad_mask);
    else if (key == "lambda") num(model.lambda);
    else if (key == "variant") model.variant = parse_variant(value);
    else if (key == "init_scale") num(model.init_scale);
    else if (key == "attention_init_scale") num(model.attention_init_scale);
    else if (key == "lr" || key == "learning_rate") num(train.learning_rate);
    else if (key == "batch" || key == "batch_size") num(train.batch_size);
    else if (key == "epochs") num(train.epochs);
    else if (key == "skipgram_form") train.skipgram_form = parse_skipgram_form(value);
    else if (key == "use_skipgram") flag(train.use_skipgram);
    else if (key == "seed") {
      std::uint64_t s = 0;
      num(s);
      set_seed(s);
    } else throw ValidationError("unknown config key '" + std::string(key) + "'");
  }

  void validate() const {
    model.validate();
    train.validate();
  }

  std::string to_text() const {
    std::string s;
    auto put = [&](std::string_view k, const std::string& v) {
      s += k;
      s += " = ";
      s += v;
      s += '\n';
    };
    put("dim", std::to_string(model.dim));
    put("layers", std::to_string(model.layers));
    put("k_max", std::to_string(model.k_max));
    put("gamma", format_real(model.gamma));
    put("routing_iters", std::to_string(model.routing_iters));
    put("neighbor_cap", std::to_string(model.neighbor_cap));
    put("pad_mask", model.pad_mask ? "true" : "false");
    put("lambda", format_real(model.lambda));
    put("variant", std::string(to_string(model.variant)));
    put("init_scale", format_real(model.init_scale));
    put("attention_init_scale", format_real(model.attention_init_scale));
    put("lr", format_real(train.learning_rate));
    put("batch", std::to_string(train.batch_size));
    put("epochs", std::to_string(train.epochs));
    put("skipgram_form", std::string(to_string(train.skipgram_form)));
    put("use_skipgram", train.use_skipgram ? "true" : "false");
    put("seed", std::to_string(train.seed));
    return s;
  }
};

inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& name = "config") {
  const auto lines = detail::lines_of(text);
  for (std::size_t ln = 1; ln <= lines.size(); ++ln) {
    const auto line = detail::trim(lines[ln - 1]);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw LoadError(name + ":" + std::to_string(ln) + ": expected key = value");
    try {
      cfg.apply(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw LoadError(name + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
}

}  // namespace m2gnn
