#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "opera/derivations.hpp"
#include "opera/model.hpp"
#include "opera/tensor.hpp"

namespace opera::training {

struct TrainConfig {
  double lambda_op = 0.3;
  double encoder_lr = 1e-3;  // BLR
  double head_lr = 1e-3;     // LR
  double encoder_wd = 0.01;  // BWD
  double head_wd = 5e-5;     // WD
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double warmup_fraction = 0.06;
  std::uint64_t seed = 13;
  model::ModelConfig model;

  void validate() const;
};

// Flat `key = value` config file; keys are the TrainConfig field names, with
// the nested model fields (d_h, n_h, encoder_layers, max_seq_len,
// max_span_len, ablate_op) accepted at top level. Unlisted keys keep the
// values of `base`.
TrainConfig parse_config_text(std::string_view text, std::string_view origin,
                              const TrainConfig& base = {});
TrainConfig parse_config_file(const std::filesystem::path& path, const TrainConfig& base = {});

// "desk" is the default small setup; "paper" restores the published
// full-scale hyperparameters (slow on CPU, kept for documentation).
void apply_profile(TrainConfig& config, std::string_view profile);

struct LossRefs {
  tensor::Ref total, answer, op;
};

// L = L_a + lambda * L_op. L_a is the negative marginal log-likelihood over
// the derivations; L_op sums -log p_op over the rule-derived operations and
// contributes zero when the set is empty. Requires a usable instance.
LossRefs compute_loss(tensor::Tape& tape, const model::ForwardOutput& out,
                      const derivations::LabeledInstance& inst, double lambda_op);

// Linear ramp to base_lr over the warmup steps, then cosine decay to zero at
// total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction);

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<tensor::Tensor> m, v;  // aligned with the param list

  explicit AdamState(const std::vector<tensor::Param*>& params);
};

// One decoupled-weight-decay Adam update; encoder params (name prefix
// "encoder.") use the encoder rate/decay, everything else the head ones.
// A non-finite gradient anywhere skips the whole update (grads are cleared,
// step does not advance) and returns false.
bool adam_step(const std::vector<tensor::Param*>& params, AdamState& state, double encoder_rate,
               double head_rate, double encoder_wd, double head_wd);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0, loss_a = 0.0, loss_op = 0.0;
  double train_em = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t skipped_batches = 0;  // non-finite gradient batches

  std::string metrics_csv() const;  // epoch,loss,loss_a,loss_op,train_em
};

// Deterministic training over the usable instances: seeded shuffling, fixed
// batch order, per-batch mean loss, Adam with the cosine-warmup schedule.
TrainResult train(model::Model& m, const std::vector<derivations::LabeledInstance>& data,
                  const TrainConfig& config);

inline constexpr char kCheckpointMagic[4] = {'O', 'P', 'R', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, model::Model& m,
                     const corpus::Vocab& vocab, const AdamState* optimizer = nullptr,
                     const std::string& rng_state = {});

struct LoadedCheckpoint {
  model::ModelConfig config;
  corpus::Vocab vocab;
  std::unique_ptr<model::Model> model;
  std::optional<AdamState> optimizer;
  std::string rng_state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace opera::training
