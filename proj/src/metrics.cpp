#include "tempo/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "tempo/errors.hpp"

namespace tempo::bench {

double avg_at_k(std::span<const std::vector<int>> correct_flags, int k) {
  if (k < 1) throw ContractViolation("avg_at_k: k must be >= 1");
  if (correct_flags.empty()) throw ContractViolation("avg_at_k: no tasks");
  double sum = 0.0;
  for (const std::vector<int>& flags : correct_flags) {
    if (static_cast<int>(flags.size()) < k) {
      throw ContractViolation("avg_at_k: fewer than k samples for a task");
    }
    int correct = 0;
    for (int i = 0; i < k; ++i) correct += flags[i];
    sum += static_cast<double>(correct) / static_cast<double>(k);
  }
  return sum / static_cast<double>(correct_flags.size());
}

double pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n) throw ContractViolation("pass_at_k: need 0 <= c <= n");
  if (k < 1 || k > n) throw ContractViolation("pass_at_k: need 1 <= k <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;

  if (n <= 62) {
    // C(n-c, k) / C(n, k) with exact 64-bit binomials; a single rounded
    // division keeps small cases (like n=16, c=1, k=8) exact.
    const auto binom = [](int nn, int kk) {
      unsigned long long r = 1;
      for (int i = 1; i <= kk; ++i) {
        r = r * static_cast<unsigned long long>(nn - kk + i) /
            static_cast<unsigned long long>(i);
      }
      return r;
    };
    return 1.0 - static_cast<double>(binom(n - c, k)) /
                     static_cast<double>(binom(n, k));
  }
  double log_ratio = 0.0;
  for (int i = 0; i < k; ++i) {
    log_ratio += std::log(static_cast<double>(n - c - i)) -
                 std::log(static_cast<double>(n - i));
  }
  return 1.0 - std::exp(log_ratio);
}

double mean_pass_at_k(std::span<const int> correct_counts, int n, int k) {
  if (correct_counts.empty()) throw ContractViolation("mean_pass_at_k: no tasks");
  double sum = 0.0;
  for (int c : correct_counts) sum += pass_at_k(n, c, k);
  return sum / static_cast<double>(correct_counts.size());
}

double answer_entropy(std::span<const std::optional<int>> answers) {
  if (answers.empty()) throw ContractViolation("answer_entropy: empty group");
  std::map<int, int> counts;
  int malformed = 0;
  for (const auto& a : answers) {
    if (a) {
      counts[*a] += 1;
    } else {
      malformed += 1;
    }
  }
  const double total = static_cast<double>(answers.size());
  double entropy = 0.0;
  const auto add = [&](int count) {
    if (count == 0) return;
    const double p = count / total;
    entropy -= p * std::log(p);
  };
  for (const auto& [answer, count] : counts) add(count);
  add(malformed);
  return entropy;
}

void EvalRecord::validate() const {
  if (n < 0) throw ContractViolation("eval record: negative sample count");
  for (int c : correct) {
    if (c < 0 || c > n) throw ContractViolation("eval record: correct count outside [0, n]");
  }
  if (avg_at.size() != ks.size() || pass_at.size() != ks.size()) {
    throw ContractViolation("eval record: metric vectors misaligned with ks");
  }
  for (double v : avg_at) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractViolation("eval record: avg@k outside [0,1]");
  }
  double prev = -1.0;
  for (std::size_t i = 0; i < pass_at.size(); ++i) {
    if (!(pass_at[i] >= 0.0 && pass_at[i] <= 1.0)) {
      throw ContractViolation("eval record: pass@k outside [0,1]");
    }
    // ks are stored ascending by evaluate(); pass@k must not decrease then.
    if (i > 0 && ks[i] > ks[i - 1] && pass_at[i] < prev) {
      throw ContractViolation("eval record: pass@k decreasing in k");
    }
    prev = pass_at[i];
  }
}

nlohmann::json EvalRecord::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["split"] = split;
  j["n"] = n;
  j["correct"] = correct;
  j["ks"] = ks;
  j["avg_at"] = avg_at;
  j["pass_at"] = pass_at;
  j["mean_entropy"] = mean_entropy;
  j["actor_loss"] = actor_loss;
  j["critic_loss"] = critic_loss;
  j["wall_clock_s"] = wall_clock_s;
  return j;
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.step = j.at("step").get<int>();
  r.split = j.at("split").get<std::string>();
  r.n = j.at("n").get<int>();
  r.correct = j.at("correct").get<std::vector<int>>();
  r.ks = j.at("ks").get<std::vector<int>>();
  r.avg_at = j.at("avg_at").get<std::vector<double>>();
  r.pass_at = j.at("pass_at").get<std::vector<double>>();
  r.mean_entropy = j.at("mean_entropy").get<double>();
  r.actor_loss = j.at("actor_loss").get<double>();
  r.critic_loss = j.at("critic_loss").get<double>();
  r.wall_clock_s = j.value("wall_clock_s", 0.0);
  return r;
}

EvalRecord evaluate(const nnet::PolicyParams& policy,
                    const taskgen::Vocab& vocab,
                    std::span<const taskgen::Task> tasks, int n,
                    std::span<const int> ks, double temperature, int max_len,
                    Rng& rng) {
  if (tasks.empty()) throw ContractViolation("evaluate: no tasks");
  if (n < 1) throw ContractViolation("evaluate: n must be >= 1");
  for (int k : ks) {
    if (k < 1 || k > n) throw ContractViolation("evaluate: each k must satisfy 1 <= k <= n");
  }

  const auto start = std::chrono::steady_clock::now();
  EvalRecord record;
  record.n = n;
  record.ks.assign(ks.begin(), ks.end());
  std::sort(record.ks.begin(), record.ks.end());

  std::vector<std::vector<int>> flags;
  flags.reserve(tasks.size());
  double entropy_sum = 0.0;
  for (const taskgen::Task& task : tasks) {
    std::vector<int> task_flags(n);
    std::vector<std::optional<int>> answers(n);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      const TokenSeq response = nnet::sample_response(
          policy, task.prompt(), max_len, temperature, vocab.eos_id, rng);
      task_flags[i] =
          taskgen::verify(task, vocab, response, taskgen::Access::evaluation);
      answers[i] = taskgen::extract_answer(vocab, task.modulus(), response);
      correct += task_flags[i];
    }
    entropy_sum += answer_entropy(answers);
    record.correct.push_back(correct);
    flags.push_back(std::move(task_flags));
  }
  record.mean_entropy = entropy_sum / static_cast<double>(tasks.size());

  for (int k : record.ks) {
    record.avg_at.push_back(avg_at_k(flags, k));
    record.pass_at.push_back(mean_pass_at_k(record.correct, n, k));
  }

  record.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  record.validate();
  return record;
}

void write_metric_header(std::ostream& out) {
  nlohmann::json j;
  j["schema"] = "tempo-metrics";
  j["version"] = 1;
  out << j.dump() << "\n";
}

void append_metric_record(std::ostream& out, const EvalRecord& record) {
  nlohmann::json j = record.to_json();
  j.erase("wall_clock_s");  // volatile; kept out of the determinism surface
  out << j.dump() << "\n";
}

std::vector<EvalRecord> read_metric_log(std::istream& in) {
  std::vector<EvalRecord> records;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    if (first) {
      first = false;
      if (j.contains("schema")) {
        if (j.at("schema") != "tempo-metrics") {
          throw ConfigError("metric log: unknown schema");
        }
        continue;
      }
    }
    records.push_back(EvalRecord::from_json(j));
  }
  return records;
}

}  // namespace tempo::bench
