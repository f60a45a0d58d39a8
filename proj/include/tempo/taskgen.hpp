#ifndef TEMPO_TASKGEN_HPP_
#define TEMPO_TASKGEN_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempo/types.hpp"

namespace tempo::taskgen {

enum class Op { add, sub, mul };

std::string op_symbol(Op op);
Op op_from_symbol(const std::string& symbol);

// Token inventory for the arithmetic task family. Layout is fixed:
// [pad, bos, sep, eos, digit 0..n_digits-1, one token per operator].
struct Vocab {
  std::vector<std::string> tokens;
  TokenId bos_id = 0;
  TokenId sep_id = 0;
  TokenId eos_id = 0;
  TokenId pad_id = 0;
  int n_digits = 0;

  int size() const { return static_cast<int>(tokens.size()); }

  bool is_digit(TokenId t) const { return t >= 4 && t < 4 + n_digits; }
  int digit_value(TokenId t) const { return static_cast<int>(t) - 4; }
  TokenId digit_id(int value) const { return static_cast<TokenId>(4 + value); }
  std::optional<TokenId> find(const std::string& symbol) const;

  static Vocab arithmetic(int n_digits, const std::vector<Op>& operators);
  void validate() const;  // throws ContractViolation when invariants fail
};

struct GeneratorConfig {
  int modulus = 7;
  int operand_lo = 0;
  int operand_hi = 6;
  int depth = 1;  // number of operators in the left-folded chain
  std::vector<Op> operators = {Op::add};
  int count = 32;
  std::uint64_t seed = 0;
  std::int64_t id_base = 0;
  bool sealed = false;  // gold answers readable only with evaluation access

  void validate() const;  // throws ConfigError
};

// Context under which a gold answer is read. Sealed (unlabeled) tasks admit
// only evaluation access; a training-context read is a contract violation.
enum class Access { training, evaluation };

class Task {
 public:
  Task(std::int64_t id, TokenSeq prompt, int gold, int difficulty, int modulus,
       bool sealed);

  std::int64_t id() const { return id_; }
  const TokenSeq& prompt() const { return prompt_; }
  int difficulty() const { return difficulty_; }
  int modulus() const { return modulus_; }
  bool sealed() const { return sealed_; }

  // Throws ContractViolation (and bumps the audit counter) when called with
  // training access on a sealed task.
  int gold_answer(Access access) const;

 private:
  std::int64_t id_;
  TokenSeq prompt_;
  int gold_;
  int difficulty_;
  int modulus_;
  bool sealed_;
};

struct DatasetSplit {
  Vocab vocab;
  std::vector<Task> labeled;
  std::vector<Task> unlabeled;
};

// Process-wide audit of gold-answer reads, used by the hygiene tests.
// sealed_training_reads counts attempted contract violations (each also
// throws); sealed_eval_reads counts legitimate evaluation-context reads.
std::uint64_t sealed_training_reads();
std::uint64_t sealed_eval_reads();
void reset_access_audit();

Vocab vocab_for(const GeneratorConfig& config);
Vocab vocab_for(std::span<const GeneratorConfig> configs);

// Deterministic for fixed (config, vocab). Prompt layout: bos, expression
// tokens, sep. Gold answer is the exact left-to-right evaluation mod modulus.
std::vector<Task> gen_tasks(const GeneratorConfig& config, const Vocab& vocab);
std::vector<Task> gen_tasks(const GeneratorConfig& config);

// Decodes the answer segment of a response: digits after the last sep and
// before the first eos, folded mod modulus. nullopt on any malformation.
std::optional<int> extract_answer(const Vocab& vocab, int modulus,
                                  std::span<const TokenId> response);

// 1 iff the response carries a well-formed answer segment equal to the gold
// answer. Malformed responses score 0; this never throws for bad responses
// (only for sealed-access violations).
int verify(const Task& task, const Vocab& vocab,
           std::span<const TokenId> response, Access access);

// Decimal token encoding of a value, no leading zeros.
TokenSeq canonical_answer_tokens(const Vocab& vocab, int value);
// The minimal well-formed response: sep, answer digits, eos.
TokenSeq canonical_response(const Vocab& vocab, int value);

std::vector<Task> split_holdout(const GeneratorConfig& config, const Vocab& vocab);

// Disjoint labeled/unlabeled split; unlabeled tasks are sealed. Throws
// ContractViolation when the configured id ranges overlap.
DatasetSplit split_shifted(const GeneratorConfig& config_labeled,
                           const GeneratorConfig& config_unlabeled);

// Line-delimited task records {id, prompt_tokens, difficulty, split}; gold
// answers go to a separate sidecar so sealed-access audits stay simple.
void dump_tasks(std::ostream& out, std::span<const Task> tasks,
                const std::string& split_name);
void dump_tasks(std::ostream& out, const DatasetSplit& split);
void dump_gold_sidecar(std::ostream& out, std::span<const Task> tasks);
void dump_gold_sidecar(std::ostream& out, const DatasetSplit& split);

}  // namespace tempo::taskgen

#endif  // TEMPO_TASKGEN_HPP_
