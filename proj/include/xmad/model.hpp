#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/graph.hpp"
#include "xmad/rng.hpp"
#include "xmad/sample.hpp"
#include "xmad/tensor.hpp"

namespace xmad {

enum class AttentionVariant { CONTEXT, PAIRWISE };

inline const char* variant_name(AttentionVariant v) {
  return v == AttentionVariant::CONTEXT ? "CONTEXT" : "PAIRWISE";
}

inline AttentionVariant variant_from(const std::string& s) {
  if (s == "CONTEXT") return AttentionVariant::CONTEXT;
  if (s == "PAIRWISE") return AttentionVariant::PAIRWISE;
  throw ConfigError("unknown attention variant: " + s);
}

struct ModelConfig {
  int hidden = 32;
  int heads = 2;
  AttentionVariant variant = AttentionVariant::PAIRWISE;
  int num_answers = 0;
  int K = 0;
  int M = 0;
  int d = 0;
  int vocab = 0;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (hidden < 1 || heads < 1 || K < 1 || M < 1 || d < 1 || vocab < 2)
      throw ConfigError("ModelConfig: dimensions must be positive");
    if (num_answers < 2) throw ConfigError("ModelConfig: need at least 2 answer candidates");
    if (hidden % heads != 0) throw ConfigError("ModelConfig: hidden must be divisible by heads");
  }

  int head_dim() const { return hidden / heads; }

  static ModelConfig toy(int num_answers, int K, int M, int d, int vocab,
                         AttentionVariant variant = AttentionVariant::PAIRWISE,
                         std::uint64_t init_seed = 0) {
    ModelConfig c;
    c.hidden = 32;
    c.heads = variant == AttentionVariant::PAIRWISE ? 2 : 1;
    c.variant = variant;
    c.num_answers = num_answers;
    c.K = K;
    c.M = M;
    c.d = d;
    c.vocab = vocab;
    c.init_seed = init_seed;
    return c;
  }

  /// Hidden width from the large-scale setting; preset only, not the default.
  static ModelConfig paper_scale(int num_answers, int K, int M, int d, int vocab) {
    ModelConfig c = toy(num_answers, K, M, d, vocab);
    c.hidden = 1024;
    c.heads = 2;
    return c;
  }
};

/// All trainable parameters plus the architecture they belong to.
struct Model {
  ModelConfig config;
  std::map<std::string, Tensor> params;
};

namespace detail {

inline Tensor glorot(Rng& rng, int fan_in, int fan_out) {
  double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

}  // namespace detail

inline Model init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.init_seed, "model-init"));
  Model m;
  m.config = config;
  int h = config.hidden;
  int hd = config.head_dim();
  m.params["embed"] = detail::glorot(rng, config.vocab, h);
  for (int l = 0; l < config.heads; ++l) {
    std::string p = "head" + std::to_string(l);
    m.params[p + ".visual.W"] = detail::glorot(rng, config.d, hd);
    m.params[p + ".visual.b"] = Tensor({1, hd}, 0.0);
    m.params[p + ".token.W"] = detail::glorot(rng, h, hd);
    m.params[p + ".token.b"] = Tensor({1, hd}, 0.0);
  }
  m.params["context.W"] = detail::glorot(rng, h, h);
  m.params["context.b"] = Tensor({1, h}, 0.0);
  m.params["fusion.W"] = detail::glorot(rng, h, h);
  m.params["fusion.b"] = Tensor({1, h}, 0.0);
  m.params["output.W"] = detail::glorot(rng, h, config.num_answers);
  m.params["output.b"] = Tensor({1, config.num_answers}, 0.0);
  return m;
}

/// Node handles of one sample's forward pass, for loss construction and for
/// reading out logits/attention after the fact.
struct ForwardNodes {
  NodeId logits = -1;                 // (1, N)
  NodeId fused = -1;                  // (1, h)
  std::vector<NodeId> attn_probs;     // per head, (K, Mq) softmax at T=1
  std::vector<NodeId> attn_logits;    // per head, (K, Mq) pre-softmax
  std::vector<std::uint8_t> attn_mask;  // flattened K*Mq cell validity
};

/// Builds the forward pass on the given graph. Parameters are registered on
/// first use and reused (by name) for later samples in the same graph.
inline ForwardNodes forward(Graph& g, const Model& model,
                            std::map<std::string, NodeId>& param_nodes, const Sample& sample) {
  const ModelConfig& cfg = model.config;
  if (sample.features.rows() != cfg.K || sample.features.cols() != cfg.d)
    throw ContractError("forward: sample feature shape does not match config");
  if (static_cast<int>(sample.tokens.size()) != cfg.M)
    throw ContractError("forward: sample token count does not match config");
  if (sample.valid_tokens() < 1) throw ContractError("forward: sample has no valid tokens");

  auto P = [&](const std::string& name) {
    auto it = param_nodes.find(name);
    if (it == param_nodes.end())
      it = param_nodes.emplace(name, g.param(name, model.params.at(name))).first;
    return it->second;
  };
  auto linear = [&](NodeId x, const std::string& prefix) {
    return g.add_rowvec(g.matmul(x, P(prefix + ".W")), P(prefix + ".b"));
  };

  NodeId visual = g.constant(sample.features, "features");
  NodeId embeds = g.gather_rows(P("embed"), sample.tokens);  // (M, h)
  std::vector<std::uint8_t> token_keep(sample.token_mask.begin(), sample.token_mask.end());
  NodeId ctx_mean = g.mean_rows_masked(embeds, token_keep);  // (1, h)
  NodeId context = g.relu(linear(ctx_mean, "context"));      // (1, h)

  bool pairwise = cfg.variant == AttentionVariant::PAIRWISE;
  int mq = pairwise ? cfg.M : 1;
  std::vector<std::uint8_t> cell_mask(static_cast<std::size_t>(cfg.K) * mq, 1);
  if (pairwise)
    for (int i = 0; i < cfg.K; ++i)
      for (int j = 0; j < cfg.M; ++j)
        cell_mask[static_cast<std::size_t>(i) * cfg.M + j] = sample.token_mask[j];

  double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  ForwardNodes out;
  out.attn_mask = cell_mask;
  std::vector<NodeId> head_outputs;
  for (int l = 0; l < cfg.heads; ++l) {
    std::string p = "head" + std::to_string(l);
    NodeId u = g.relu(linear(visual, p + ".visual"));                        // (K, hd)
    NodeId e = g.relu(linear(pairwise ? embeds : ctx_mean, p + ".token"));   // (Mq, hd)
    NodeId logits = g.scale(g.matmul(u, g.transpose(e)), inv_scale);         // (K, Mq)
    NodeId probs = g.softmax(logits, 1.0, cell_mask);
    NodeId beta = g.row_sums(probs);                                         // (K, 1)
    NodeId attended = g.matmul(g.transpose(beta), u);                        // (1, hd)
    out.attn_logits.push_back(logits);
    out.attn_probs.push_back(probs);
    head_outputs.push_back(attended);
  }
  NodeId attended_visual =
      head_outputs.size() == 1 ? head_outputs[0] : g.concat_cols(head_outputs);  // (1, h)
  out.fused = g.mul(attended_visual, context);                                   // (1, h)
  NodeId hid = g.relu(linear(out.fused, "fusion"));
  out.logits = linear(hid, "output");
  return out;
}

/// Extracted forward results for inference-time consumers.
struct Prediction {
  Tensor logits;                       // (1, N)
  Tensor fused;                        // (1, h)
  std::vector<Tensor> attn_probs;      // per head
  std::vector<Tensor> attn_logits;     // per head
  std::vector<std::uint8_t> attn_mask; // flattened cell validity
};

inline Prediction predict(const Model& model, const Sample& sample) {
  Graph g;
  std::map<std::string, NodeId> nodes;
  ForwardNodes f = forward(g, model, nodes, sample);
  Prediction p;
  p.logits = g.value(f.logits);
  p.fused = g.value(f.fused);
  for (NodeId id : f.attn_probs) p.attn_probs.push_back(g.value(id));
  for (NodeId id : f.attn_logits) p.attn_logits.push_back(g.value(id));
  p.attn_mask = f.attn_mask;
  return p;
}

inline int argmax_answer(const Tensor& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);
  return best;
}

// ---- checkpoint I/O -------------------------------------------------------
//
// Textual format: a header with format version, config and seed, then one
// block per parameter with its shape and %.17g values (round-trips doubles
// bit-exactly).

inline constexpr const char* kCheckpointMagic = "xmad-checkpoint v1";

inline void save_model(const std::filesystem::path& path, const Model& m,
                       const std::string& config_hash = "none") {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  const ModelConfig& c = m.config;
  out << kCheckpointMagic << "\n";
  out << "config_hash " << config_hash << "\n";
  out << "hidden " << c.hidden << "\nheads " << c.heads << "\nvariant "
      << variant_name(c.variant) << "\nnum_answers " << c.num_answers << "\nK " << c.K << "\nM "
      << c.M << "\nd " << c.d << "\nvocab " << c.vocab << "\ninit_seed " << c.init_seed << "\n";
  out << "params " << m.params.size() << "\n";
  char buf[64];
  for (const auto& [name, t] : m.params) {
    out << name << " " << t.shape().size();
    for (int dim : t.shape()) out << " " << dim;
    out << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t[i]);
      out << buf << (i + 1 == t.size() ? "" : " ");
    }
    out << "\n";
  }
}

inline Model load_model(const std::filesystem::path& path, std::string* config_hash = nullptr) {
  std::ifstream in(path);
  if (!in) throw ResolutionError(path.string());
  std::string line;
  auto fail = [&](const std::string& why) { throw ParseError(path.string() + ": " + why); };

  if (!std::getline(in, line) || line != kCheckpointMagic) fail("bad checkpoint header");
  auto kv = [&](const std::string& key) {
    if (!std::getline(in, line)) fail("truncated header");
    std::istringstream ss(line);
    std::string k, v;
    ss >> k >> v;
    if (k != key) fail("expected header field " + key);
    return v;
  };
  std::string hash = kv("config_hash");
  if (config_hash) *config_hash = hash;
  ModelConfig c;
  c.hidden = std::stoi(kv("hidden"));
  c.heads = std::stoi(kv("heads"));
  c.variant = variant_from(kv("variant"));
  c.num_answers = std::stoi(kv("num_answers"));
  c.K = std::stoi(kv("K"));
  c.M = std::stoi(kv("M"));
  c.d = std::stoi(kv("d"));
  c.vocab = std::stoi(kv("vocab"));
  c.init_seed = std::stoull(kv("init_seed"));
  c.validate();

  Model m;
  m.config = c;
  std::size_t nparams = std::stoul(kv("params"));
  for (std::size_t pi = 0; pi < nparams; ++pi) {
    if (!std::getline(in, line)) fail("truncated parameter block");
    std::istringstream head(line);
    std::string name;
    int rank = 0;
    head >> name >> rank;
    if (!head || rank < 1 || rank > 8) fail("bad parameter header for " + name);
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (int& dim : shape) {
      head >> dim;
      n *= static_cast<std::size_t>(dim);
    }
    if (!head) fail("bad parameter header for " + name);
    if (!std::getline(in, line)) fail("truncated values for " + name);
    std::istringstream vals(line);
    std::vector<double> data(n);
    for (double& v : data)
      if (!(vals >> v)) fail("bad value count for " + name);
    m.params[name] = Tensor(std::move(shape), std::move(data));
  }
  return m;
}

/// Joint-feature table: one row per sample with the task label and the fused
/// (element-wise product) feature vector, for external embedding analysis.
inline void export_joint_features(const Model& model, const std::vector<Sample>& data,
                                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "task";
  for (int i = 0; i < model.config.hidden; ++i) out << ",f" << i;
  out << "\n";
  char buf[64];
  for (const Sample& s : data) {
    Prediction p = predict(model, s);
    out << task_name(s.task);
    for (std::size_t i = 0; i < p.fused.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p.fused[i]);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace xmad
