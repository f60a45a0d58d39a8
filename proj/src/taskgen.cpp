#include "tempo/taskgen.hpp"

#include <algorithm>
#include <atomic>
#include <ostream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tempo/errors.hpp"
#include "tempo/rng.hpp"

namespace tempo::taskgen {

namespace {

std::atomic<std::uint64_t> g_sealed_training_reads{0};
std::atomic<std::uint64_t> g_sealed_eval_reads{0};

}  // namespace

std::uint64_t sealed_training_reads() { return g_sealed_training_reads.load(); }
std::uint64_t sealed_eval_reads() { return g_sealed_eval_reads.load(); }
void reset_access_audit() {
  g_sealed_training_reads.store(0);
  g_sealed_eval_reads.store(0);
}

std::string op_symbol(Op op) {
  switch (op) {
    case Op::add: return "+";
    case Op::sub: return "-";
    case Op::mul: return "*";
  }
  throw ContractViolation("unknown operator");
}

Op op_from_symbol(const std::string& symbol) {
  if (symbol == "+") return Op::add;
  if (symbol == "-") return Op::sub;
  if (symbol == "*" || symbol == "x") return Op::mul;
  throw ConfigError("unknown operator symbol '" + symbol + "'");
}

std::optional<TokenId> Vocab::find(const std::string& symbol) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == symbol) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

Vocab Vocab::arithmetic(int n_digits, const std::vector<Op>& operators) {
  if (n_digits < 1 || n_digits > 10) {
    throw ConfigError("vocab: n_digits must be in [1, 10]");
  }
  Vocab v;
  v.tokens = {"<pad>", "<bos>", "<sep>", "<eos>"};
  v.pad_id = 0;
  v.bos_id = 1;
  v.sep_id = 2;
  v.eos_id = 3;
  v.n_digits = n_digits;
  for (int d = 0; d < n_digits; ++d) v.tokens.push_back(std::string(1, char('0' + d)));
  // Operator tokens are appended in canonical order, independent of the
  // order the caller listed them in.
  std::set<Op> ops(operators.begin(), operators.end());
  for (Op op : ops) v.tokens.push_back(op_symbol(op));
  v.validate();
  return v;
}

void Vocab::validate() const {
  if (size() < 4) throw ContractViolation("vocab: needs at least 4 tokens");
  std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
  if (static_cast<int>(seen.size()) != size()) {
    throw ContractViolation("vocab: token strings must be unique");
  }
  for (TokenId id : {bos_id, sep_id, eos_id, pad_id}) {
    if (id < 0 || id >= size()) throw ContractViolation("vocab: special id out of range");
  }
  std::set<TokenId> specials{bos_id, sep_id, eos_id, pad_id};
  if (specials.size() != 4) throw ContractViolation("vocab: special ids must be distinct");
}

void GeneratorConfig::validate() const {
  if (modulus < 2) throw ConfigError("generator: modulus must be >= 2");
  if (operand_lo > operand_hi) throw ConfigError("generator: operand_lo > operand_hi");
  if (operand_lo < 0) throw ConfigError("generator: operands must be non-negative");
  if (depth < 1) throw ConfigError("generator: depth must be >= 1");
  if (operators.empty()) throw ConfigError("generator: operator set must be non-empty");
  if (count < 1) throw ConfigError("generator: count must be >= 1");
}

Task::Task(std::int64_t id, TokenSeq prompt, int gold, int difficulty,
           int modulus, bool sealed)
    : id_(id),
      prompt_(std::move(prompt)),
      gold_(gold),
      difficulty_(difficulty),
      modulus_(modulus),
      sealed_(sealed) {
  if (prompt_.empty()) throw ContractViolation("task: prompt must be non-empty");
}

int Task::gold_answer(Access access) const {
  if (sealed_ && access == Access::training) {
    g_sealed_training_reads.fetch_add(1);
    throw ContractViolation("task " + std::to_string(id_) +
                            ": training-context gold read on a sealed task");
  }
  if (sealed_) g_sealed_eval_reads.fetch_add(1);
  return gold_;
}

namespace {

int digits_needed(const GeneratorConfig& c) {
  const int largest = std::max(c.operand_hi, c.modulus - 1);
  return largest >= 9 ? 10 : largest + 1;
}

void append_number_tokens(TokenSeq& out, const Vocab& vocab, int value) {
  if (value == 0) {
    out.push_back(vocab.digit_id(0));
    return;
  }
  TokenSeq digits;
  for (int v = value; v > 0; v /= 10) digits.push_back(vocab.digit_id(v % 10));
  out.insert(out.end(), digits.rbegin(), digits.rend());
}

int apply_op(Op op, int lhs, int rhs, int modulus) {
  long long acc = lhs;
  switch (op) {
    case Op::add: acc = acc + rhs; break;
    case Op::sub: acc = acc - rhs; break;
    case Op::mul: acc = acc * rhs; break;
  }
  acc %= modulus;
  if (acc < 0) acc += modulus;
  return static_cast<int>(acc);
}

}  // namespace

Vocab vocab_for(const GeneratorConfig& config) {
  return vocab_for(std::span<const GeneratorConfig>(&config, 1));
}

Vocab vocab_for(std::span<const GeneratorConfig> configs) {
  if (configs.empty()) throw ConfigError("vocab_for: no generator configs");
  int n_digits = 1;
  std::set<Op> ops;
  for (const auto& c : configs) {
    c.validate();
    n_digits = std::max(n_digits, digits_needed(c));
    ops.insert(c.operators.begin(), c.operators.end());
  }
  return Vocab::arithmetic(n_digits, {ops.begin(), ops.end()});
}

std::vector<Task> gen_tasks(const GeneratorConfig& config, const Vocab& vocab) {
  config.validate();
  vocab.validate();
  if (digits_needed(config) > vocab.n_digits) {
    throw ConfigError("gen_tasks: vocab has too few digit tokens for this config");
  }
  for (Op op : config.operators) {
    if (!vocab.find(op_symbol(op))) {
      throw ConfigError("gen_tasks: vocab is missing operator token " + op_symbol(op));
    }
  }

  Rng rng(config.seed);
  const int span = config.operand_hi - config.operand_lo + 1;
  std::vector<Task> tasks;
  tasks.reserve(config.count);
  for (int i = 0; i < config.count; ++i) {
    std::vector<int> operands(config.depth + 1);
    std::vector<Op> ops(config.depth);
    for (int& a : operands) {
      a = config.operand_lo + static_cast<int>(rng.uniform_int(span));
    }
    for (Op& op : ops) {
      op = config.operators[rng.uniform_int(config.operators.size())];
    }

    int acc = operands[0] % config.modulus;
    TokenSeq prompt{vocab.bos_id};
    append_number_tokens(prompt, vocab, operands[0]);
    for (int k = 0; k < config.depth; ++k) {
      prompt.push_back(*vocab.find(op_symbol(ops[k])));
      append_number_tokens(prompt, vocab, operands[k + 1]);
      acc = apply_op(ops[k], acc, operands[k + 1], config.modulus);
    }
    prompt.push_back(vocab.sep_id);

    tasks.emplace_back(config.id_base + i, std::move(prompt), acc, config.depth,
                       config.modulus, config.sealed);
  }
  return tasks;
}

std::vector<Task> gen_tasks(const GeneratorConfig& config) {
  return gen_tasks(config, vocab_for(config));
}

std::optional<int> extract_answer(const Vocab& vocab, int modulus,
                                  std::span<const TokenId> response) {
  const auto eos = std::find(response.begin(), response.end(), vocab.eos_id);
  if (eos == response.end()) return std::nullopt;
  auto last_sep = response.begin();
  bool found_sep = false;
  for (auto it = response.begin(); it != eos; ++it) {
    if (*it == vocab.sep_id) {
      last_sep = it;
      found_sep = true;
    }
  }
  if (!found_sep) return std::nullopt;
  if (last_sep + 1 == eos) return std::nullopt;  // empty answer segment
  long long value = 0;
  for (auto it = last_sep + 1; it != eos; ++it) {
    if (!vocab.is_digit(*it)) return std::nullopt;
    value = (value * 10 + vocab.digit_value(*it)) % modulus;
  }
  return static_cast<int>(value);
}

int verify(const Task& task, const Vocab& vocab,
           std::span<const TokenId> response, Access access) {
  const int gold = task.gold_answer(access);
  const auto answer = extract_answer(vocab, task.modulus(), response);
  return (answer && *answer == gold) ? 1 : 0;
}

TokenSeq canonical_answer_tokens(const Vocab& vocab, int value) {
  if (value < 0) throw ContractViolation("canonical_answer_tokens: negative value");
  TokenSeq out;
  append_number_tokens(out, vocab, value);
  return out;
}

TokenSeq canonical_response(const Vocab& vocab, int value) {
  TokenSeq out{vocab.sep_id};
  const TokenSeq digits = canonical_answer_tokens(vocab, value);
  out.insert(out.end(), digits.begin(), digits.end());
  out.push_back(vocab.eos_id);
  return out;
}

std::vector<Task> split_holdout(const GeneratorConfig& config, const Vocab& vocab) {
  return gen_tasks(config, vocab);
}

DatasetSplit split_shifted(const GeneratorConfig& config_labeled,
                           const GeneratorConfig& config_unlabeled) {
  config_labeled.validate();
  config_unlabeled.validate();
  const std::int64_t l_lo = config_labeled.id_base;
  const std::int64_t l_hi = l_lo + config_labeled.count;
  const std::int64_t u_lo = config_unlabeled.id_base;
  const std::int64_t u_hi = u_lo + config_unlabeled.count;
  if (l_lo < u_hi && u_lo < l_hi) {
    throw ContractViolation("split_shifted: labeled/unlabeled id ranges overlap");
  }

  const GeneratorConfig configs[] = {config_labeled, config_unlabeled};
  DatasetSplit split;
  split.vocab = vocab_for(configs);

  GeneratorConfig labeled = config_labeled;
  labeled.sealed = false;
  GeneratorConfig unlabeled = config_unlabeled;
  unlabeled.sealed = true;
  split.labeled = gen_tasks(labeled, split.vocab);
  split.unlabeled = gen_tasks(unlabeled, split.vocab);
  return split;
}

void dump_tasks(std::ostream& out, std::span<const Task> tasks,
                const std::string& split_name) {
  for (const Task& task : tasks) {
    nlohmann::json j;
    j["id"] = task.id();
    j["prompt_tokens"] = task.prompt();
    j["difficulty"] = task.difficulty();
    j["split"] = split_name;
    out << j.dump() << "\n";
  }
}

void dump_tasks(std::ostream& out, const DatasetSplit& split) {
  dump_tasks(out, split.labeled, "labeled");
  dump_tasks(out, split.unlabeled, "unlabeled");
}

void dump_gold_sidecar(std::ostream& out, std::span<const Task> tasks) {
  for (const Task& t : tasks) {
    nlohmann::json j;
    j["id"] = t.id();
    j["gold"] = t.gold_answer(Access::evaluation);
    out << j.dump() << "\n";
  }
}

void dump_gold_sidecar(std::ostream& out, const DatasetSplit& split) {
  dump_gold_sidecar(out, split.labeled);
  dump_gold_sidecar(out, split.unlabeled);
}

}  // namespace tempo::taskgen
