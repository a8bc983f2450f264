#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "toolbridge/error.hpp"
#include "toolbridge/io.hpp"
#include "toolbridge/preference.hpp"
#include "toolbridge/rewriter.hpp"

namespace toolbridge {

/// A one-shot policy: for every prompt, a logit per completion in a finite
/// completion set. log-probabilities are the log-softmax of the logits.
class TabularPolicy {
 public:
  struct Slot {
    std::vector<std::string> completions;
    std::vector<double> logits;
    std::unordered_map<std::string, std::size_t> index;

    bool operator==(const Slot& o) const { return completions == o.completions && logits == o.logits; }
  };

  /// Adds a prompt with its completions; logits default to zero (uniform).
  void add_prompt(const std::string& prompt_id, const std::vector<std::string>& completions,
                  std::vector<double> logits = {}) {
    if (slots_.count(prompt_id)) throw Error(ErrorKind::duplicate_key, "prompt '" + prompt_id + "' already exists");
    if (logits.empty()) logits.assign(completions.size(), 0.0);
    if (logits.size() != completions.size()) {
      throw Error(ErrorKind::invalid_argument, "prompt '" + prompt_id + "': one logit per completion is required");
    }
    Slot slot;
    for (std::size_t i = 0; i < completions.size(); ++i) {
      if (!std::isfinite(logits[i])) throw Error(ErrorKind::invalid_argument, "logits must be finite");
      if (!slot.index.emplace(completions[i], i).second) {
        throw Error(ErrorKind::duplicate_key, "prompt '" + prompt_id + "': duplicate completion");
      }
    }
    slot.completions = completions;
    slot.logits = std::move(logits);
    slots_.emplace(prompt_id, std::move(slot));
  }

  /// Completion id of `text` under `prompt_id`, adding it (logit 0) when new.
  std::size_t intern(const std::string& prompt_id, const std::string& text) {
    auto& slot = slots_[prompt_id];
    auto [it, inserted] = slot.index.emplace(text, slot.completions.size());
    if (inserted) {
      slot.completions.push_back(text);
      slot.logits.push_back(0.0);
    }
    return it->second;
  }

  bool has_prompt(const std::string& prompt_id) const { return slots_.count(prompt_id) > 0; }
  bool empty() const noexcept { return slots_.empty(); }
  std::size_t prompt_count() const noexcept { return slots_.size(); }
  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }

  const Slot& slot(const std::string& prompt_id) const {
    auto it = slots_.find(prompt_id);
    if (it == slots_.end()) throw Error(ErrorKind::not_found, "unknown prompt '" + prompt_id + "'");
    return it->second;
  }
  Slot& slot(const std::string& prompt_id) {
    auto it = slots_.find(prompt_id);
    if (it == slots_.end()) throw Error(ErrorKind::not_found, "unknown prompt '" + prompt_id + "'");
    return it->second;
  }

  std::vector<double> log_probs(const std::string& prompt_id) const { return log_softmax(slot(prompt_id).logits); }

  std::vector<double> probs(const std::string& prompt_id) const {
    auto lp = log_probs(prompt_id);
    for (auto& v : lp) v = std::exp(v);
    return lp;
  }

  /// Same prompts with the same completion lists, in the same order.
  bool same_universe(const TabularPolicy& other) const {
    if (slots_.size() != other.slots_.size()) return false;
    for (auto a = slots_.begin(), b = other.slots_.begin(); a != slots_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.completions != b->second.completions) return false;
    }
    return true;
  }

  /// Every logit, prompts in key order.
  std::vector<double> flat() const {
    std::vector<double> out;
    for (const auto& [id, s] : slots_) out.insert(out.end(), s.logits.begin(), s.logits.end());
    return out;
  }
  void set_flat(std::span<const double> values) {
    std::size_t k = 0;
    for (auto& [id, s] : slots_) {
      for (auto& l : s.logits) {
        if (k >= values.size()) throw Error(ErrorKind::invalid_argument, "flat parameter vector too short");
        l = values[k++];
      }
    }
    if (k != values.size()) throw Error(ErrorKind::invalid_argument, "flat parameter vector too long");
  }

  bool operator==(const TabularPolicy& o) const { return slots_ == o.slots_; }

  static std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) return {};
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
  }

 private:
  std::map<std::string, Slot> slots_;
};

/// Gradient with the same layout as TabularPolicy::flat().
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

namespace detail {

inline std::map<std::string, std::size_t> slot_offsets(const TabularPolicy& policy) {
  std::map<std::string, std::size_t> offsets;
  std::size_t k = 0;
  for (const auto& [id, s] : policy.slots()) {
    offsets[id] = k;
    k += s.logits.size();
  }
  return offsets;
}

inline std::size_t parameter_count(const TabularPolicy& policy) {
  std::size_t n = 0;
  for (const auto& [id, s] : policy.slots()) n += s.logits.size();
  return n;
}

inline void check_completion(const TabularPolicy& policy, const std::string& prompt_id, std::size_t id) {
  if (id >= policy.slot(prompt_id).completions.size()) {
    throw Error(ErrorKind::not_found, "prompt '" + prompt_id + "' has no completion " + std::to_string(id));
  }
}

// -log sigmoid(x), computed without overflow.
inline double neg_log_sigmoid(double x) { return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct SftRow {
  std::string prompt_id;
  std::size_t target = 0;
};

/// Negative log-likelihood of the targets, averaged over rows, and its
/// gradient with respect to every logit.
inline LossAndGradient sft_loss(const TabularPolicy& policy, const std::vector<SftRow>& rows) {
  if (rows.empty()) throw Error(ErrorKind::invalid_argument, "sft loss needs at least one row");
  const auto offsets = detail::slot_offsets(policy);
  LossAndGradient out;
  out.gradient.assign(detail::parameter_count(policy), 0.0);
  const double inv = 1.0 / static_cast<double>(rows.size());
  double mean = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    detail::check_completion(policy, row.prompt_id, row.target);
    const auto lp = policy.log_probs(row.prompt_id);
    mean += (-lp[row.target] - mean) / static_cast<double>(r + 1);
    const auto off = offsets.at(row.prompt_id);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      out.gradient[off + i] += (std::exp(lp[i]) - (i == row.target ? 1.0 : 0.0)) * inv;
    }
  }
  out.loss = mean;
  return out;
}

struct DpoRow {
  std::string prompt_id;
  std::size_t chosen = 0;
  std::size_t rejected = 0;
};

struct DpoBatch {
  std::vector<DpoRow> rows;
  double beta = 0.1;

  void validate() const {
    if (!(beta > 0.0)) throw Error(ErrorKind::invalid_argument, "beta must be > 0");
    for (const auto& r : rows) {
      if (r.chosen == r.rejected) {
        throw Error(ErrorKind::invalid_argument, "prompt '" + r.prompt_id + "': chosen and rejected must differ");
      }
    }
  }
};

/// Implicit-reward margin of one row:
///   (log pi(y+|x) - log ref(y+|x)) - (log pi(y-|x) - log ref(y-|x)).
inline double dpo_margin(const TabularPolicy& policy, const TabularPolicy& reference, const DpoRow& row) {
  const auto lp = policy.log_probs(row.prompt_id);
  const auto lr = reference.log_probs(row.prompt_id);
  return (lp[row.chosen] - lr[row.chosen]) - (lp[row.rejected] - lr[row.rejected]);
}

/// DPO objective -mean log sigmoid(beta * margin) and its gradient with
/// respect to the policy logits. The reference is frozen.
inline LossAndGradient dpo_loss(const TabularPolicy& policy, const TabularPolicy& reference, const DpoBatch& batch) {
  batch.validate();
  if (batch.rows.empty()) throw Error(ErrorKind::invalid_argument, "dpo loss needs at least one row");
  if (!policy.same_universe(reference)) {
    throw Error(ErrorKind::invalid_argument, "policy and reference have different prompt/completion universes");
  }
  const auto offsets = detail::slot_offsets(policy);
  LossAndGradient out;
  out.gradient.assign(detail::parameter_count(policy), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.rows.size());
  double mean = 0.0;
  for (std::size_t r = 0; r < batch.rows.size(); ++r) {
    const auto& row = batch.rows[r];
    detail::check_completion(policy, row.prompt_id, row.chosen);
    detail::check_completion(policy, row.prompt_id, row.rejected);
    const double h = batch.beta * dpo_margin(policy, reference, row);
    // Running mean keeps a batch of identical losses exactly equal to that loss.
    mean += (detail::neg_log_sigmoid(h) - mean) / static_cast<double>(r + 1);
    // d/dlogits [log pi(c) - log pi(r)] = e_c - e_r; the softmax terms cancel.
    const double g = -detail::sigmoid(-h) * batch.beta * inv;
    const auto off = offsets.at(row.prompt_id);
    out.gradient[off + row.chosen] += g;
    out.gradient[off + row.rejected] -= g;
  }
  out.loss = mean;
  return out;
}

struct TrainResult {
  TabularPolicy policy;
  std::vector<double> losses;  // loss before each step
};

namespace detail {

template <typename LossFn>
TrainResult gradient_descent(TabularPolicy policy, std::size_t steps, double learning_rate, LossFn&& loss_fn) {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::invalid_argument, "learning rate must be > 0");
  TrainResult out;
  out.losses.reserve(steps);
  auto params = policy.flat();
  for (std::size_t step = 0; step < steps; ++step) {
    const auto lg = loss_fn(policy);
    if (!std::isfinite(lg.loss)) {
      throw Error(ErrorKind::divergence, "loss is not finite at step " + std::to_string(step));
    }
    out.losses.push_back(lg.loss);
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * lg.gradient[i];
    policy.set_flat(params);
  }
  out.policy = std::move(policy);
  return out;
}

}  // namespace detail

/// Plain gradient descent on the DPO loss.
inline TrainResult train_toy(const TabularPolicy& policy, const TabularPolicy& reference, const DpoBatch& batch,
                             std::size_t steps, double learning_rate) {
  batch.validate();
  return detail::gradient_descent(policy, steps, learning_rate,
                                  [&](const TabularPolicy& p) { return dpo_loss(p, reference, batch); });
}

/// Plain gradient descent on the SFT loss.
inline TrainResult train_sft(const TabularPolicy& policy, const std::vector<SftRow>& rows, std::size_t steps,
                             double learning_rate) {
  return detail::gradient_descent(policy, steps, learning_rate,
                                  [&](const TabularPolicy& p) { return sft_loss(p, rows); });
}

/// Maps preference pairs into the policy's completion universe, interning
/// unseen texts per prompt (prompt id = query_id).
inline DpoBatch batch_from_pairs(TabularPolicy& policy, const std::vector<PreferencePair>& pairs, double beta) {
  DpoBatch batch;
  batch.beta = beta;
  for (const auto& p : pairs) {
    const auto c = policy.intern(p.query_id, p.chosen);
    const auto r = policy.intern(p.query_id, p.rejected);
    batch.rows.push_back({p.query_id, c, r});
  }
  batch.validate();
  return batch;
}

inline OrderedJson to_json(const TabularPolicy& policy) {
  OrderedJson j;
  j["format_version"] = 1;
  OrderedJson prompts = OrderedJson::object();
  for (const auto& [id, s] : policy.slots()) {
    prompts[id] = OrderedJson{{"completions", s.completions}, {"logits", s.logits}};
  }
  j["prompts"] = std::move(prompts);
  return j;
}

inline void save_policy(const TabularPolicy& policy, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(policy).dump(1) + "\n");
}

inline TabularPolicy load_policy(const std::filesystem::path& path) {
  TabularPolicy policy;
  try {
    const auto j = Json::parse(read_text_file(path));
    if (j.value("format_version", -1) != 1) {
      throw Error(ErrorKind::version_mismatch, path.string() + ": unsupported policy format_version");
    }
    for (const auto& [id, slot] : j.at("prompts").items()) {
      policy.add_prompt(id, slot.at("completions").get<std::vector<std::string>>(),
                        slot.at("logits").get<std::vector<double>>());
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, path.string() + ": malformed policy: " + e.what());
  }
  return policy;
}

inline std::string training_log_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    out += buf;
  }
  return out;
}

enum class ToyDecoding {
  greedy,  // the n most probable completions, ties by completion id
  sample,  // n independent draws from the policy, seeded per prompt
};

/// Rewriter backed by a tabular policy.
class ToyBackend final : public Backend {
 public:
  explicit ToyBackend(std::shared_ptr<const TabularPolicy> policy, std::uint64_t seed = 0,
                      ToyDecoding decoding = ToyDecoding::greedy)
      : policy_(std::move(policy)), seed_(seed), decoding_(decoding) {
    if (!policy_ || policy_->empty()) throw Error(ErrorKind::invalid_argument, "toy backend needs a non-empty policy");
  }

  std::string name() const override { return decoding_ == ToyDecoding::greedy ? "toy" : "toy-sample"; }
  std::uint64_t seed() const noexcept { return seed_; }
  ToyDecoding decoding() const noexcept { return decoding_; }

  std::vector<std::string> generate(const QueryRecord& record, const RewritePrompt&, std::size_t n) const override {
    if (!policy_->has_prompt(record.query_id)) {
      throw Error(ErrorKind::backend, "toy policy has no prompt '" + record.query_id + "'");
    }
    const auto& slot = policy_->slot(record.query_id);
    std::vector<std::string> out;
    if (decoding_ == ToyDecoding::sample) {
      const auto probs = policy_->probs(record.query_id);
      std::mt19937_64 rng(seed_ ^ fnv1a64(record.query_id));
      for (std::size_t j = 0; j < n; ++j) {
        // 53 random bits -> [0, 1); inverse CDF over completion ids.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        double acc = 0.0;
        std::size_t pick = probs.size() - 1;
        for (std::size_t i = 0; i < probs.size(); ++i) {
          acc += probs[i];
          if (u < acc) {
            pick = i;
            break;
          }
        }
        out.push_back(slot.completions[pick]);
      }
      return out;
    }
    std::vector<std::size_t> order(slot.logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return slot.logits[a] > slot.logits[b]; });
    for (std::size_t i = 0; i < std::min(n, order.size()); ++i) out.push_back(slot.completions[order[i]]);
    return out;
  }

  const TabularPolicy& policy() const noexcept { return *policy_; }

 private:
  std::shared_ptr<const TabularPolicy> policy_;
  std::uint64_t seed_;
  ToyDecoding decoding_;
};

inline std::unique_ptr<Backend> toy_backend(const TabularPolicy& policy, std::uint64_t seed = 0,
                                            ToyDecoding decoding = ToyDecoding::greedy) {
  return std::make_unique<ToyBackend>(std::make_shared<const TabularPolicy>(policy), seed, decoding);
}

}  // namespace toolbridge
