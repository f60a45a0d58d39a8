#include "tempo/runconfig.hpp"

#include <algorithm>
#include <fstream>

#include "tempo/errors.hpp"

namespace tempo::bench {

namespace {

nlohmann::json generator_to_json(const taskgen::GeneratorConfig& g) {
  nlohmann::json j;
  j["modulus"] = g.modulus;
  j["operand_lo"] = g.operand_lo;
  j["operand_hi"] = g.operand_hi;
  j["depth"] = g.depth;
  std::vector<std::string> ops;
  for (taskgen::Op op : g.operators) ops.push_back(taskgen::op_symbol(op));
  j["operators"] = ops;
  j["count"] = g.count;
  j["seed"] = g.seed;
  j["id_base"] = g.id_base;
  return j;
}

taskgen::GeneratorConfig generator_from_json(const nlohmann::json& j,
                                             const taskgen::GeneratorConfig& base) {
  taskgen::GeneratorConfig g = base;
  g.modulus = j.value("modulus", g.modulus);
  g.operand_lo = j.value("operand_lo", g.operand_lo);
  g.operand_hi = j.value("operand_hi", g.operand_hi);
  g.depth = j.value("depth", g.depth);
  if (j.contains("operators")) {
    g.operators.clear();
    for (const auto& s : j.at("operators")) {
      g.operators.push_back(taskgen::op_from_symbol(s.get<std::string>()));
    }
  }
  g.count = j.value("count", g.count);
  g.seed = j.value("seed", g.seed);
  g.id_base = j.value("id_base", g.id_base);
  return g;
}

nlohmann::json policy_loss_to_json(const rlcore::PolicyLossConfig& c) {
  nlohmann::json j;
  j["clip_enabled"] = c.clip_enabled;
  j["clip_epsilon"] = c.clip_epsilon;
  j["seq_clip_enabled"] = c.seq_clip_enabled;
  j["seq_clip_low"] = c.seq_clip_low;
  j["seq_clip_high"] = c.seq_clip_high;
  j["entropy_bonus"] = c.entropy_bonus;
  j["kl_ref_weight"] = c.kl_ref_weight;
  return j;
}

rlcore::PolicyLossConfig policy_loss_from_json(const nlohmann::json& j,
                                               const rlcore::PolicyLossConfig& base) {
  rlcore::PolicyLossConfig c = base;
  c.clip_enabled = j.value("clip_enabled", c.clip_enabled);
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.seq_clip_enabled = j.value("seq_clip_enabled", c.seq_clip_enabled);
  c.seq_clip_low = j.value("seq_clip_low", c.seq_clip_low);
  c.seq_clip_high = j.value("seq_clip_high", c.seq_clip_high);
  c.entropy_bonus = j.value("entropy_bonus", c.entropy_bonus);
  c.kl_ref_weight = j.value("kl_ref_weight", c.kl_ref_weight);
  return c;
}

std::string scheme_name(rlcore::OptimizerState::Scheme s) {
  return s == rlcore::OptimizerState::Scheme::sgd ? "sgd" : "adam";
}

rlcore::OptimizerState::Scheme scheme_from_name(const std::string& s) {
  if (s == "sgd") return rlcore::OptimizerState::Scheme::sgd;
  if (s == "adam") return rlcore::OptimizerState::Scheme::adam;
  throw ConfigError("unknown optimizer scheme '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  labeled.validate();
  unlabeled.validate();
  holdout.validate();
  stage1.validate();
  ttt.validate();
  if (eval.samples < 1) throw ConfigError("eval: samples must be >= 1");
  if (eval.ks.empty()) throw ConfigError("eval: ks must be non-empty");
  for (int k : eval.ks) {
    if (k < 1) throw ConfigError("eval: each k must be >= 1");
    if (k > eval.samples) {
      throw ConfigError("eval: samples must be >= max(ks)");
    }
  }
  if (!(eval.temperature > 0.0)) throw ConfigError("eval: temperature must be > 0");
  if (out_dir.empty()) throw ConfigError("run config: out_dir must be set");
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.labeled.modulus = 5;
  c.labeled.operand_lo = 0;
  c.labeled.operand_hi = 1;
  c.labeled.depth = 2;
  c.labeled.operators = {taskgen::Op::add};
  c.labeled.count = 64;
  c.labeled.seed = 101;
  c.labeled.id_base = 0;

  c.unlabeled = c.labeled;
  c.unlabeled.depth = 3;
  c.unlabeled.count = 64;
  c.unlabeled.seed = 202;
  c.unlabeled.id_base = 1000;

  c.holdout = c.unlabeled;
  c.holdout.seed = 303;
  c.holdout.id_base = 2000;

  c.model.backend = nnet::Backend::mlp;
  c.model.context_window = 12;
  c.model.embed_dim = 8;
  c.model.hidden_dim = 64;

  c.stage1.steps = 400;
  c.stage1.prompts_per_step = 32;
  c.stage1.rollouts_per_prompt = 8;
  c.stage1.max_len = 5;
  c.stage1.lr_actor = 0.02;
  c.stage1.lr_critic = 0.05;
  c.stage1.temperature = 1.0;

  c.ttt.method = emloop::Method::tempo;
  c.ttt.iterations = 300;
  c.ttt.e_step_period = 1;
  c.ttt.prompts_per_step = 32;
  c.ttt.rollouts_per_prompt = 8;
  c.ttt.max_len = 5;
  c.ttt.lr_actor = 0.01;
  c.ttt.lr_critic = 0.02;
  c.ttt.temperature = 1.0;
  c.ttt.eval_every = 25;
  c.ttt.e_step_prompts = 32;
  c.ttt.e_step_rollouts = 8;

  c.eval.samples = 16;
  c.eval.ks = {1, 8, 16};
  c.eval.temperature = 1.0;
  return c;
}

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j;
  j["labeled"] = generator_to_json(config.labeled);
  j["unlabeled"] = generator_to_json(config.unlabeled);
  j["holdout"] = generator_to_json(config.holdout);

  nlohmann::json model;
  model["backend"] = config.model.backend == nnet::Backend::tabular ? "tabular" : "mlp";
  model["context_window"] = config.model.context_window;
  model["embed_dim"] = config.model.embed_dim;
  model["hidden_dim"] = config.model.hidden_dim;
  j["model"] = model;

  nlohmann::json stage1;
  stage1["steps"] = config.stage1.steps;
  stage1["prompts_per_step"] = config.stage1.prompts_per_step;
  stage1["rollouts_per_prompt"] = config.stage1.rollouts_per_prompt;
  stage1["max_len"] = config.stage1.max_len;
  stage1["lr_actor"] = config.stage1.lr_actor;
  stage1["lr_critic"] = config.stage1.lr_critic;
  stage1["temperature"] = config.stage1.temperature;
  stage1["optimizer"] = scheme_name(config.stage1.scheme);
  stage1["policy_loss"] = policy_loss_to_json(config.stage1.policy_loss);
  j["stage1"] = stage1;

  nlohmann::json ttt;
  ttt["method"] = emloop::to_string(config.ttt.method);
  ttt["iterations"] = config.ttt.iterations;
  ttt["e_step_period"] = config.ttt.e_step_period;
  ttt["prompts_per_step"] = config.ttt.prompts_per_step;
  ttt["rollouts_per_prompt"] = config.ttt.rollouts_per_prompt;
  ttt["max_len"] = config.ttt.max_len;
  ttt["lr_actor"] = config.ttt.lr_actor;
  ttt["lr_critic"] = config.ttt.lr_critic;
  ttt["temperature"] = config.ttt.temperature;
  ttt["eval_every"] = config.ttt.eval_every;
  ttt["e_step_prompts"] = config.ttt.e_step_prompts;
  ttt["e_step_rollouts"] = config.ttt.e_step_rollouts;
  ttt["e_step_replay"] = config.ttt.e_step_replay;
  ttt["optimizer"] = scheme_name(config.ttt.scheme);
  ttt["policy_loss"] = policy_loss_to_json(config.ttt.policy_loss);
  j["ttt"] = ttt;

  nlohmann::json eval;
  eval["samples"] = config.eval.samples;
  eval["ks"] = config.eval.ks;
  eval["temperature"] = config.eval.temperature;
  eval["max_len"] = config.eval.max_len;
  j["eval"] = eval;

  j["out_dir"] = config.out_dir;
  j["seed"] = config.seed;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = RunConfig::desk_default();
  if (j.contains("labeled")) c.labeled = generator_from_json(j.at("labeled"), c.labeled);
  if (j.contains("unlabeled")) {
    c.unlabeled = generator_from_json(j.at("unlabeled"), c.unlabeled);
  }
  if (j.contains("holdout")) c.holdout = generator_from_json(j.at("holdout"), c.holdout);

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("backend")) {
      const std::string b = m.at("backend").get<std::string>();
      if (b == "tabular") {
        c.model.backend = nnet::Backend::tabular;
      } else if (b == "mlp") {
        c.model.backend = nnet::Backend::mlp;
      } else {
        throw ConfigError("unknown backend '" + b + "'");
      }
    }
    c.model.context_window = m.value("context_window", c.model.context_window);
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
  }

  if (j.contains("stage1")) {
    const auto& s = j.at("stage1");
    c.stage1.steps = s.value("steps", c.stage1.steps);
    c.stage1.prompts_per_step = s.value("prompts_per_step", c.stage1.prompts_per_step);
    c.stage1.rollouts_per_prompt =
        s.value("rollouts_per_prompt", c.stage1.rollouts_per_prompt);
    c.stage1.max_len = s.value("max_len", c.stage1.max_len);
    c.stage1.lr_actor = s.value("lr_actor", c.stage1.lr_actor);
    c.stage1.lr_critic = s.value("lr_critic", c.stage1.lr_critic);
    c.stage1.temperature = s.value("temperature", c.stage1.temperature);
    if (s.contains("optimizer")) {
      c.stage1.scheme = scheme_from_name(s.at("optimizer").get<std::string>());
    }
    if (s.contains("policy_loss")) {
      c.stage1.policy_loss = policy_loss_from_json(s.at("policy_loss"), c.stage1.policy_loss);
    }
  }

  if (j.contains("ttt")) {
    const auto& t = j.at("ttt");
    if (t.contains("method")) {
      c.ttt.method = emloop::method_from_string(t.at("method").get<std::string>());
    }
    c.ttt.iterations = t.value("iterations", c.ttt.iterations);
    c.ttt.e_step_period = t.value("e_step_period", c.ttt.e_step_period);
    c.ttt.prompts_per_step = t.value("prompts_per_step", c.ttt.prompts_per_step);
    c.ttt.rollouts_per_prompt =
        t.value("rollouts_per_prompt", c.ttt.rollouts_per_prompt);
    c.ttt.max_len = t.value("max_len", c.ttt.max_len);
    c.ttt.lr_actor = t.value("lr_actor", c.ttt.lr_actor);
    c.ttt.lr_critic = t.value("lr_critic", c.ttt.lr_critic);
    c.ttt.temperature = t.value("temperature", c.ttt.temperature);
    c.ttt.eval_every = t.value("eval_every", c.ttt.eval_every);
    c.ttt.e_step_prompts = t.value("e_step_prompts", c.ttt.e_step_prompts);
    c.ttt.e_step_rollouts = t.value("e_step_rollouts", c.ttt.e_step_rollouts);
    c.ttt.e_step_replay = t.value("e_step_replay", c.ttt.e_step_replay);
    if (t.contains("optimizer")) {
      c.ttt.scheme = scheme_from_name(t.at("optimizer").get<std::string>());
    }
    if (t.contains("policy_loss")) {
      c.ttt.policy_loss = policy_loss_from_json(t.at("policy_loss"), c.ttt.policy_loss);
    }
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.samples = e.value("samples", c.eval.samples);
    if (e.contains("ks")) c.eval.ks = e.at("ks").get<std::vector<int>>();
    c.eval.temperature = e.value("temperature", c.eval.temperature);
    c.eval.max_len = e.value("max_len", c.eval.max_len);
  }

  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tempo::bench
