#ifndef TEMPO_RUNCONFIG_HPP_
#define TEMPO_RUNCONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempo/emloop.hpp"
#include "tempo/nnet.hpp"
#include "tempo/rlcore.hpp"
#include "tempo/taskgen.hpp"

namespace tempo::bench {

struct ModelConfig {
  nnet::Backend backend = nnet::Backend::mlp;
  int context_window = 12;
  int embed_dim = 8;
  int hidden_dim = 64;
};

struct EvalConfig {
  int samples = 16;  // n independent samples per task
  std::vector<int> ks = {1, 8, 16};
  double temperature = 1.0;
  int max_len = 0;  // 0: inherit the training max response length
};

// Full experiment specification. `seed` drives every stream in the run;
// the ttt.seed field is overridden by the runner with a derived value.
struct RunConfig {
  taskgen::GeneratorConfig labeled;
  taskgen::GeneratorConfig unlabeled;
  taskgen::GeneratorConfig holdout;
  ModelConfig model;
  rlcore::Stage1Config stage1;
  emloop::TTTConfig ttt;
  EvalConfig eval;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 0;

  void validate() const;
  int eval_max_len() const { return eval.max_len > 0 ? eval.max_len : ttt.max_len; }

  // The shifted desk-scale benchmark: depth-2 labeled, depth-3 unlabeled.
  static RunConfig desk_default();
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace tempo::bench

#endif  // TEMPO_RUNCONFIG_HPP_
