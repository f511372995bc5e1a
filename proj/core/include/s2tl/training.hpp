#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2tl/audio.hpp"
#include "s2tl/checkpoint.hpp"
#include "s2tl/corpus.hpp"
#include "s2tl/model.hpp"
#include "s2tl/text.hpp"

namespace s2tl {

enum class Task { asr, st };
std::string to_string(Task task);
Task parse_task(const std::string& text);

struct TrainConfig {
  double peak_lr = 1e-3;
  int warmup_updates = 10000;
  double clip_norm = 10.0;
  float label_smoothing = 0.1f;
  int max_tokens_per_batch = 20000;
  int update_freq = 16;
  int max_updates = 100000;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  int validate_every = 500;

  /// Full-scale recipe: lr 1e-3 (ASR) / 2e-3 (ST), 10k warm-up, clip 10,
  /// smoothing 0.1, 20k tokens per batch, update frequency 16, 100k updates.
  static TrainConfig paper(Task task);
  /// Scaled-down recipe for single-CPU runs on the synthetic corpus.
  static TrainConfig desk(Task task);

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  /// Applies the keys present in `kv` on top of `base`.
  static TrainConfig from_map(const std::map<std::string, std::string>& kv, TrainConfig base);
};

/// Mean over non-PAD positions of (1-eps)·NLL(target) + eps·mean_v NLL(v).
/// `targets` exclude BOS and include EOS.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets,
                         float smoothing = 0.1f);

/// Linear warm-up to `peak` at step `warmup`, then peak·sqrt(warmup/step).
double inv_sqrt_lr(long step, double peak, long warmup);

/// Scales all gradients by max_norm/g when the global L2 norm g exceeds
/// max_norm. Returns the pre-clip norm; throws NumericError on NaN/Inf.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);

  /// One bias-corrected update using the current gradients.
  void step(double lr);
  long steps() const { return steps_; }

  const std::vector<Buffer>& first_moments() const { return m_; }
  const std::vector<Buffer>& second_moments() const { return v_; }
  void restore(long steps, std::vector<Buffer> m, std::vector<Buffer> v);

 private:
  std::vector<Tensor> params_;
  double beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<Buffer> m_, v_;
};

/// A training pair: normalized frames and framed target tokens.
struct Example {
  std::string id;
  Tensor frames;  // [n, mel]
  TokenSequence tokens;

  /// Source frames plus target tokens, the unit of the batch budget.
  std::size_t budget() const { return frames.dim(0) + tokens.size() - 1; }
};

std::vector<Example> make_examples(std::span<const FeatureUtterance> utts, const Vocabulary& vocab,
                                   const CmvnStats& cmvn, Task task);

struct Batch {
  std::vector<std::size_t> indices;
  std::size_t budget = 0;
};

/// Packs examples in `order` greedily while the summed budget stays within
/// `max_tokens`; an example larger than the budget forms its own batch.
std::vector<Batch> pack_batches(std::span<const Example> examples,
                                std::span<const std::size_t> order, std::size_t max_tokens);

/// Seeded per-epoch shuffle followed by packing.
std::vector<Batch> epoch_batches(std::span<const Example> examples, std::size_t max_tokens,
                                 std::uint64_t seed, std::uint64_t epoch);

struct UpdateRecord {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;  // smoothed loss per target token
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::size_t target_tokens = 0;
};

struct TrainOutputs {
  std::filesystem::path dir;       // receives checkpoint_last.bin / checkpoint_best.bin
  Checkpoint extras;               // sections and tensors copied into every checkpoint
  std::ostream* log = nullptr;     // line-delimited JSON records
};

/// Owns the optimizer and data order for one model. Every utterance is run
/// through its own forward/backward pass and its loss is scaled by the
/// target-token count of the whole update, so gradients accumulate in the
/// same order whether an update arrives as one batch or as several.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg, std::vector<Example> train,
          std::vector<Example> valid = {});

  /// One optimizer update over the given micro-batches (indices into the
  /// training set).
  UpdateRecord update(std::span<const Batch> micro_batches);
  /// Pulls the next update_freq batches from the seeded sampler.
  UpdateRecord train_step();
  /// Target-token mean NLL on the validation set (eval mode).
  double validate();
  /// Runs until max_updates, validating and checkpointing along the way.
  std::vector<UpdateRecord> run(const TrainOutputs& out);

  long step() const { return optimizer_.steps(); }
  double best_metric() const { return best_; }
  const TrainConfig& config() const { return cfg_; }
  std::span<const Example> train_set() const { return train_; }

  /// Model parameters plus optimizer, sampler and RNG state.
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ck);

 private:
  std::vector<Batch> next_batches();

  Model& model_;
  TrainConfig cfg_;
  std::vector<Example> train_, valid_;
  std::vector<Tensor> params_;
  Adam optimizer_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<Batch> epoch_plan_;
  double best_ = 0.0;
  bool has_best_ = false;
};

/// Copies the encoder tensors of an ASR checkpoint into `model`. Requires
/// identical encoder configuration; returns the transferred names.
std::vector<std::string> transfer_encoder(Model& model, const Checkpoint& asr);

}  // namespace s2tl
