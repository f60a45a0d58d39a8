#include "tempo/nnet.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "tempo/errors.hpp"
#include "tempo/mathutil.hpp"

namespace tempo::nnet {

namespace {

// Dense tables above this entry count refuse to allocate.
constexpr std::size_t kMaxTableEntries = std::size_t{1} << 24;

void check_token(TokenId tok, int vocab_size) {
  if (tok < 0 || tok >= vocab_size) {
    throw ContractViolation("nnet: token id " + std::to_string(tok) +
                            " outside vocab of size " + std::to_string(vocab_size));
  }
}

std::size_t context_index(const BackboneShape& shape,
                          std::span<const TokenId> ctx) {
  std::size_t idx = 0;
  std::size_t stride = 1;
  for (int i = 0; i < shape.context_window; ++i) {
    check_token(ctx[i], shape.vocab_size);
    idx += static_cast<std::size_t>(ctx[i]) * stride;
    stride *= static_cast<std::size_t>(shape.vocab_size);
  }
  return idx;
}

}  // namespace

std::size_t BackboneShape::table_rows() const {
  std::size_t rows = 1;
  for (int i = 0; i < context_window; ++i) {
    if (rows > kMaxTableEntries / static_cast<std::size_t>(vocab_size)) {
      throw ConfigError("tabular backend: vocab^window exceeds the dense-table cap");
    }
    rows *= static_cast<std::size_t>(vocab_size);
  }
  return rows;
}

std::size_t BackboneShape::w1_offset() const {
  return static_cast<std::size_t>(vocab_size) * embed_dim;
}
std::size_t BackboneShape::b1_offset() const {
  return w1_offset() +
         static_cast<std::size_t>(context_window) * embed_dim * hidden_dim;
}
std::size_t BackboneShape::w2_offset() const {
  return b1_offset() + static_cast<std::size_t>(hidden_dim);
}
std::size_t BackboneShape::b2_offset() const {
  return w2_offset() + static_cast<std::size_t>(hidden_dim) * output_dim;
}

std::size_t BackboneShape::param_count() const {
  if (backend == Backend::tabular) {
    const std::size_t entries = table_rows() * static_cast<std::size_t>(output_dim);
    if (entries > kMaxTableEntries) {
      throw ConfigError("tabular backend: table exceeds the dense-table cap");
    }
    return entries;
  }
  return b2_offset() + static_cast<std::size_t>(output_dim);
}

void BackboneShape::validate() const {
  if (vocab_size < 2) throw ConfigError("backbone: vocab_size must be >= 2");
  if (context_window < 1) throw ConfigError("backbone: context_window must be >= 1");
  if (output_dim < 1) throw ConfigError("backbone: output_dim must be >= 1");
  if (pad_id < 0 || pad_id >= vocab_size) {
    throw ConfigError("backbone: pad_id out of range");
  }
  if (backend == Backend::mlp) {
    if (embed_dim < 1 || hidden_dim < 1) {
      throw ConfigError("backbone: mlp needs embed_dim and hidden_dim >= 1");
    }
  }
  param_count();  // throws when the tabular table would exceed the cap
}

GradBuffer::GradBuffer(const BackboneShape& s) : shape(s) {
  shape.validate();
  values.assign(shape.param_count(), 0.0);
}

void GradBuffer::reset() {
  std::fill(values.begin(), values.end(), 0.0);
  accum_count = 0;
}

void init_params(Params& params, Rng& rng) {
  params.shape.validate();
  params.values.assign(params.shape.param_count(), 0.0);
  if (params.shape.backend == Backend::tabular) return;

  const BackboneShape& s = params.shape;
  const auto uniform = [&rng](double scale) {
    return (rng.uniform01() * 2.0 - 1.0) * 0.08 * scale;
  };
  const double w1_scale = 1.0 / std::sqrt(double(s.context_window) * s.embed_dim);
  const double w2_scale = 1.0 / std::sqrt(double(s.hidden_dim));
  for (std::size_t i = s.embed_offset(); i < s.w1_offset(); ++i) {
    params.values[i] = uniform(1.0);
  }
  for (std::size_t i = s.w1_offset(); i < s.b1_offset(); ++i) {
    params.values[i] = uniform(w1_scale);
  }
  for (std::size_t i = s.w2_offset(); i < s.b2_offset(); ++i) {
    params.values[i] = uniform(w2_scale);
  }
}

PolicyParams make_policy(const BackboneShape& shape, Rng& rng) {
  BackboneShape s = shape;
  s.output_dim = s.vocab_size;
  PolicyParams p;
  p.core.shape = s;
  init_params(p.core, rng);
  return p;
}

CriticParams make_critic(const BackboneShape& shape, Rng& rng) {
  BackboneShape s = shape;
  s.output_dim = 1;
  CriticParams c;
  c.core.shape = s;
  init_params(c.core, rng);
  return c;
}

TokenSeq context_window(std::span<const TokenId> prompt,
                        std::span<const TokenId> response, int t_exclusive,
                        int window, TokenId pad_id) {
  if (t_exclusive < 0 || t_exclusive > static_cast<int>(response.size())) {
    throw ContractViolation("context_window: position out of range");
  }
  TokenSeq ctx(static_cast<std::size_t>(window), pad_id);
  int slot = window;
  for (int i = t_exclusive - 1; i >= 0 && slot > 0; --i) ctx[--slot] = response[i];
  for (int i = static_cast<int>(prompt.size()) - 1; i >= 0 && slot > 0; --i) {
    ctx[--slot] = prompt[i];
  }
  return ctx;
}

namespace {

// Fills `raw` with head outputs; for mlp also exposes the intermediate
// activations needed by backward.
struct MlpTrace {
  std::vector<double> x;     // concatenated embeddings, w*d
  std::vector<double> hact;  // tanh activations, h
};

void forward_into(const Params& params, std::span<const TokenId> ctx_in,
                  std::vector<double>& raw, MlpTrace* trace) {
  const BackboneShape& s = params.shape;
  if (static_cast<int>(ctx_in.size()) > s.context_window) {
    throw ContractViolation("nnet: context longer than the context window");
  }
  TokenSeq padded;
  std::span<const TokenId> ctx = ctx_in;
  if (static_cast<int>(ctx_in.size()) < s.context_window) {
    padded.assign(static_cast<std::size_t>(s.context_window), s.pad_id);
    std::copy(ctx_in.begin(), ctx_in.end(),
              padded.end() - static_cast<std::ptrdiff_t>(ctx_in.size()));
    ctx = padded;
  }

  raw.assign(static_cast<std::size_t>(s.output_dim), 0.0);
  if (s.backend == Backend::tabular) {
    const std::size_t row = context_index(s, ctx) * s.output_dim;
    for (int k = 0; k < s.output_dim; ++k) raw[k] = params.values[row + k];
    return;
  }

  const int w = s.context_window, d = s.embed_dim, h = s.hidden_dim;
  const double* embed = params.values.data() + s.embed_offset();
  const double* w1 = params.values.data() + s.w1_offset();
  const double* b1 = params.values.data() + s.b1_offset();
  const double* w2 = params.values.data() + s.w2_offset();
  const double* b2 = params.values.data() + s.b2_offset();

  std::vector<double> x(static_cast<std::size_t>(w) * d);
  for (int i = 0; i < w; ++i) {
    check_token(ctx[i], s.vocab_size);
    const double* row = embed + static_cast<std::size_t>(ctx[i]) * d;
    std::copy(row, row + d, x.begin() + static_cast<std::ptrdiff_t>(i) * d);
  }

  std::vector<double> hact(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) hact[j] = b1[j];
  for (int i = 0; i < w * d; ++i) {
    const double xi = x[i];
    const double* w1_row = w1 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) hact[j] += xi * w1_row[j];
  }
  for (int j = 0; j < h; ++j) hact[j] = std::tanh(hact[j]);

  for (int k = 0; k < s.output_dim; ++k) raw[k] = b2[k];
  for (int j = 0; j < h; ++j) {
    const double hj = hact[j];
    const double* w2_row = w2 + static_cast<std::size_t>(j) * s.output_dim;
    for (int k = 0; k < s.output_dim; ++k) raw[k] += hj * w2_row[k];
  }

  if (trace != nullptr) {
    trace->x = std::move(x);
    trace->hact = std::move(hact);
  }
}

void backward_one(const Params& params, GradBuffer& grad,
                  std::span<const TokenId> ctx_in,
                  std::span<const double> d_raw) {
  const BackboneShape& s = params.shape;
  if (static_cast<int>(d_raw.size()) != s.output_dim) {
    throw ContractViolation("nnet backward: upstream gradient has wrong width");
  }

  TokenSeq padded;
  std::span<const TokenId> ctx = ctx_in;
  if (static_cast<int>(ctx_in.size()) < s.context_window) {
    padded.assign(static_cast<std::size_t>(s.context_window), s.pad_id);
    std::copy(ctx_in.begin(), ctx_in.end(),
              padded.end() - static_cast<std::ptrdiff_t>(ctx_in.size()));
    ctx = padded;
  } else if (static_cast<int>(ctx_in.size()) > s.context_window) {
    throw ContractViolation("nnet backward: context longer than the context window");
  }

  if (s.backend == Backend::tabular) {
    const std::size_t row = context_index(s, ctx) * s.output_dim;
    for (int k = 0; k < s.output_dim; ++k) grad.values[row + k] += d_raw[k];
    return;
  }

  MlpTrace trace;
  std::vector<double> raw;
  forward_into(params, ctx, raw, &trace);

  const int w = s.context_window, d = s.embed_dim, h = s.hidden_dim;
  const int out = s.output_dim;
  const double* w1 = params.values.data() + s.w1_offset();
  const double* w2 = params.values.data() + s.w2_offset();
  double* g_embed = grad.values.data() + s.embed_offset();
  double* g_w1 = grad.values.data() + s.w1_offset();
  double* g_b1 = grad.values.data() + s.b1_offset();
  double* g_w2 = grad.values.data() + s.w2_offset();
  double* g_b2 = grad.values.data() + s.b2_offset();

  std::vector<double> d_hact(static_cast<std::size_t>(h), 0.0);
  for (int j = 0; j < h; ++j) {
    const double hj = trace.hact[j];
    double* g_w2_row = g_w2 + static_cast<std::size_t>(j) * out;
    const double* w2_row = w2 + static_cast<std::size_t>(j) * out;
    double acc = 0.0;
    for (int k = 0; k < out; ++k) {
      g_w2_row[k] += hj * d_raw[k];
      acc += w2_row[k] * d_raw[k];
    }
    d_hact[j] = acc;
  }
  for (int k = 0; k < out; ++k) g_b2[k] += d_raw[k];

  std::vector<double> d_hpre(static_cast<std::size_t>(h));
  for (int j = 0; j < h; ++j) {
    d_hpre[j] = (1.0 - trace.hact[j] * trace.hact[j]) * d_hact[j];
    g_b1[j] += d_hpre[j];
  }

  std::vector<double> d_x(static_cast<std::size_t>(w) * d, 0.0);
  for (int i = 0; i < w * d; ++i) {
    const double xi = trace.x[i];
    double* g_w1_row = g_w1 + static_cast<std::size_t>(i) * h;
    const double* w1_row = w1 + static_cast<std::size_t>(i) * h;
    double acc = 0.0;
    for (int j = 0; j < h; ++j) {
      g_w1_row[j] += xi * d_hpre[j];
      acc += w1_row[j] * d_hpre[j];
    }
    d_x[i] = acc;
  }

  for (int i = 0; i < w; ++i) {
    double* g_row = g_embed + static_cast<std::size_t>(ctx[i]) * d;
    const double* dx = d_x.data() + static_cast<std::size_t>(i) * d;
    for (int l = 0; l < d; ++l) g_row[l] += dx[l];
  }
}

}  // namespace

std::vector<double> forward_raw(const Params& params,
                                std::span<const TokenId> context) {
  std::vector<double> raw;
  forward_into(params, context, raw, nullptr);
  return raw;
}

std::vector<double> policy_logits(const PolicyParams& policy,
                                  std::span<const TokenId> context) {
  return forward_raw(policy.core, context);
}

SequenceLogProb sequence_logprob(const PolicyParams& policy,
                                 std::span<const TokenId> prompt,
                                 std::span<const TokenId> response) {
  if (response.empty()) {
    throw ContractViolation("sequence_logprob: empty response");
  }
  const BackboneShape& s = policy.core.shape;
  SequenceLogProb out;
  out.per_token.reserve(response.size());
  for (int t = 0; t < static_cast<int>(response.size()); ++t) {
    const TokenSeq ctx = context_window(prompt, response, t, s.context_window, s.pad_id);
    const std::vector<double> logits = policy_logits(policy, ctx);
    check_token(response[t], s.vocab_size);
    const double lp = logits[response[t]] - log_sum_exp(logits);
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

TokenSeq sample_response(const PolicyParams& policy,
                         std::span<const TokenId> prompt, int max_len,
                         double temperature, TokenId eos_id, Rng& rng) {
  if (max_len < 1) throw ContractViolation("sample_response: max_len must be >= 1");
  if (!(temperature > 0.0)) {
    throw ContractViolation("sample_response: temperature must be > 0 (use greedy_response)");
  }
  const BackboneShape& s = policy.core.shape;
  TokenSeq response;
  response.reserve(max_len);
  for (int t = 0; t < max_len; ++t) {
    const TokenSeq ctx = context_window(prompt, response, t, s.context_window, s.pad_id);
    std::vector<double> probs = policy_logits(policy, ctx);
    for (double& z : probs) z /= temperature;
    softmax_inplace(probs);
    const double u = rng.uniform01();
    double cum = 0.0;
    TokenId tok = static_cast<TokenId>(probs.size()) - 1;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      cum += probs[k];
      if (u < cum) {
        tok = static_cast<TokenId>(k);
        break;
      }
    }
    response.push_back(tok);
    if (tok == eos_id) break;
  }
  return response;
}

TokenSeq greedy_response(const PolicyParams& policy,
                         std::span<const TokenId> prompt, int max_len,
                         TokenId eos_id) {
  if (max_len < 1) throw ContractViolation("greedy_response: max_len must be >= 1");
  const BackboneShape& s = policy.core.shape;
  TokenSeq response;
  for (int t = 0; t < max_len; ++t) {
    const TokenSeq ctx = context_window(prompt, response, t, s.context_window, s.pad_id);
    const std::vector<double> logits = policy_logits(policy, ctx);
    TokenId tok = 0;
    for (std::size_t k = 1; k < logits.size(); ++k) {
      if (logits[k] > logits[tok]) tok = static_cast<TokenId>(k);
    }
    response.push_back(tok);
    if (tok == eos_id) break;
  }
  return response;
}

std::vector<double> critic_values(const CriticParams& critic,
                                  std::span<const TokenId> prompt,
                                  std::span<const TokenId> response) {
  if (response.empty()) throw ContractViolation("critic_values: empty response");
  const BackboneShape& s = critic.core.shape;
  std::vector<double> values;
  values.reserve(response.size());
  std::vector<double> raw;
  for (int t = 1; t <= static_cast<int>(response.size()); ++t) {
    const TokenSeq ctx = context_window(prompt, response, t, s.context_window, s.pad_id);
    forward_into(critic.core, ctx, raw, nullptr);
    values.push_back(sigmoid(raw[0]));
  }
  return values;
}

void backward(const Params& params, GradBuffer& grad,
              std::span<const OutputGrad> upstream) {
  if (grad.shape.param_count() != params.shape.param_count()) {
    throw ContractViolation("nnet backward: grad buffer shape mismatch");
  }
  for (const OutputGrad& u : upstream) backward_one(params, grad, u.context, u.d_raw);
  grad.accum_count += 1;
}

void backward_position(const Params& params, GradBuffer& grad,
                       std::span<const TokenId> context,
                       std::span<const double> d_raw) {
  if (grad.shape.param_count() != params.shape.param_count()) {
    throw ContractViolation("nnet backward: grad buffer shape mismatch");
  }
  backward_one(params, grad, context, d_raw);
}

double accumulate_weighted_logprob_grad(const PolicyParams& policy,
                                        std::span<const TokenId> prompt,
                                        std::span<const TokenId> response,
                                        std::span<const double> coeff,
                                        GradBuffer& grad) {
  if (coeff.size() != response.size()) {
    throw ContractViolation("weighted logprob grad: coefficient length mismatch");
  }
  const BackboneShape& s = policy.core.shape;
  double total = 0.0;
  std::vector<double> d_raw(static_cast<std::size_t>(s.output_dim));
  for (int t = 0; t < static_cast<int>(response.size()); ++t) {
    const TokenSeq ctx = context_window(prompt, response, t, s.context_window, s.pad_id);
    std::vector<double> probs = policy_logits(policy, ctx);
    const double lse = log_sum_exp(probs);
    check_token(response[t], s.vocab_size);
    total += coeff[t] * (probs[response[t]] - lse);
    softmax_inplace(probs);
    for (int k = 0; k < s.output_dim; ++k) {
      d_raw[k] = coeff[t] * ((k == response[t] ? 1.0 : 0.0) - probs[k]);
    }
    backward_one(policy.core, grad, ctx, d_raw);
  }
  grad.accum_count += 1;
  return total;
}

namespace {

constexpr char kMagic[8] = {'T', 'P', 'R', 'M', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ConfigError("checkpoint: truncated stream");
  return value;
}

}  // namespace

void save_params(std::ostream& out, const Params& params) {
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::int32_t>(out, params.shape.backend == Backend::tabular ? 0 : 1);
  write_pod<std::int32_t>(out, params.shape.context_window);
  write_pod<std::int32_t>(out, params.shape.vocab_size);
  write_pod<std::int32_t>(out, params.shape.embed_dim);
  write_pod<std::int32_t>(out, params.shape.hidden_dim);
  write_pod<std::int32_t>(out, params.shape.output_dim);
  write_pod<std::int32_t>(out, params.shape.pad_id);
  write_pod<std::uint64_t>(out, params.values.size());
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
}

Params load_params(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("checkpoint: bad magic");
  }
  Params params;
  const std::int32_t backend = read_pod<std::int32_t>(in);
  params.shape.backend = backend == 0 ? Backend::tabular : Backend::mlp;
  params.shape.context_window = read_pod<std::int32_t>(in);
  params.shape.vocab_size = read_pod<std::int32_t>(in);
  params.shape.embed_dim = read_pod<std::int32_t>(in);
  params.shape.hidden_dim = read_pod<std::int32_t>(in);
  params.shape.output_dim = read_pod<std::int32_t>(in);
  params.shape.pad_id = read_pod<std::int32_t>(in);
  params.shape.validate();
  const std::uint64_t count = read_pod<std::uint64_t>(in);
  if (count != params.shape.param_count()) {
    throw ConfigError("checkpoint: parameter count does not match shape");
  }
  params.values.resize(count);
  in.read(reinterpret_cast<char*>(params.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw ConfigError("checkpoint: truncated parameter block");
  return params;
}

}  // namespace tempo::nnet
