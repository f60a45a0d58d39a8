#ifndef TEMPO_METRICS_HPP_
#define TEMPO_METRICS_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tempo/nnet.hpp"
#include "tempo/rng.hpp"
#include "tempo/taskgen.hpp"

namespace tempo::bench {

// Mean over tasks of the correct fraction among each task's first k samples
// (draw order). Each task's flag vector must hold at least k entries.
double avg_at_k(std::span<const std::vector<int>> correct_flags, int k);

// Unbiased pass@k estimator 1 - C(n-c, k)/C(n, k) for one task with c
// correct among n samples. Exact integer binomials for n <= 62, log-space
// above that.
double pass_at_k(int n, int c, int k);

double mean_pass_at_k(std::span<const int> correct_counts, int n, int k);

// Shannon entropy (nats) of the empirical answer distribution of one group;
// malformed responses form their own bucket.
double answer_entropy(std::span<const std::optional<int>> answers);

// One evaluation snapshot. Equality is exact (bitwise on doubles), which the
// log round-trip test relies on.
struct EvalRecord {
  int step = 0;
  std::string split;
  int n = 0;
  std::vector<int> correct;  // per-task correct counts out of n
  std::vector<int> ks;
  std::vector<double> avg_at;   // aligned with ks
  std::vector<double> pass_at;  // aligned with ks
  double mean_entropy = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double wall_clock_s = 0.0;

  bool operator==(const EvalRecord&) const = default;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

// n independent samples per task at the given temperature; correctness via
// evaluation-scoped verifier access (sealed tasks allowed). Never mutates
// the policy.
EvalRecord evaluate(const nnet::PolicyParams& policy,
                    const taskgen::Vocab& vocab,
                    std::span<const taskgen::Task> tasks, int n,
                    std::span<const int> ks, double temperature, int max_len,
                    Rng& rng);

// Line-delimited metric log. The first line is a schema header; each record
// line omits the volatile wall_clock_s field so identical runs produce
// byte-identical logs (timing goes to a sidecar).
void write_metric_header(std::ostream& out);
void append_metric_record(std::ostream& out, const EvalRecord& record);
std::vector<EvalRecord> read_metric_log(std::istream& in);

}  // namespace tempo::bench

#endif  // TEMPO_METRICS_HPP_
