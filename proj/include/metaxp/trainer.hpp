// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metaxp/losses.hpp"
#include "metaxp/model.hpp"
#include "metaxp/registry.hpp"
#include "metaxp/synth.hpp"

namespace metaxp::meta {

enum class Method { FT, WCA, KLD, FMP, MAML, MAML_FMP };

const char* method_name(Method method);
// Accepts the names above; "MAML+FMP" is an alias of MAML_FMP.
Method parse_method(const std::string& name);
bool is_maml(Method method);
bool uses_freeze(Method method);

enum class Optimizer { Adam, Sgd };
enum class Schedule { Noam, Constant };

struct TrainerConfig {
  double alpha = 0.01;  // inner-step learning rate, held constant
  double beta = 1.0;    // outer learning rate is beta * schedule(step)
  std::size_t inner_steps = 1;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t warmup_steps = 400;
  double support_fraction = 0.5;
  Method method = Method::FT;
  std::uint64_t rng_seed = 1;
  // Non-MAML methods only. MAML phases are always plain SGD.
  Optimizer optimizer = Optimizer::Adam;
  double lr_scale = 1.0;
  Schedule schedule = Schedule::Noam;
  double clip_norm = 5.0;      // global gradient norm; 0 disables
  std::size_t max_steps = 0;   // 0 = no cap
  // Overrides the method's freeze set. Unset: the default policy for FMP
  // and MAML_FMP, nothing frozen otherwise.
  std::optional<asr::FreezePolicy> freeze_policy;

  void validate() const;
};

struct EpochSplit {
  std::vector<std::size_t> train_ids;    // indices into the training pool
  std::vector<std::size_t> support_ids;
  std::size_t epoch_index = 0;
};

// Shuffles 0..count-1 with a stream keyed by (rng_seed, epoch_index) and
// puts round(count * support_fraction), clamped to [1, count-1], into the
// support set. Both lists come back in sorted order.
EpochSplit split_epoch(std::size_t count, double support_fraction, std::size_t epoch_index,
                       std::uint64_t rng_seed);

double noam_lr(std::size_t step, std::size_t model_dim, std::size_t warmup);

struct StepRecord {
  std::size_t iteration = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  Method method = Method::FT;
  double train_loss = 0.0;
  std::optional<double> support_loss;
  double lr = 0.0;
  double wall_ms = 0.0;
  std::size_t trainable_param_count = 0;
};

// Mean loss over a batch and its gradient with respect to every unfrozen
// registry entry.
class Objective {
 public:
  virtual ~Objective() = default;
  // Adds d(mean loss)/d(theta) into grads (resized to registry.size() on
  // first use) and returns the mean loss. `seed` drives dropout.
  virtual double evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const> batch,
                          asr::GradientSet& grads, std::uint64_t seed) = 0;
};

// Hybrid CTC/attention loss, plus the WCA or KLD regulariser when asked.
// The KLD teacher is the model at the registry snapshot; its CTC
// posteriors are cached per utterance id.
class HybridObjective : public Objective {
 public:
  enum class Regularizer { None, Wca, Kld };

  HybridObjective(asr::ModelConfig model, loss::LossConfig losses, Regularizer regularizer = Regularizer::None);

  double evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const> batch,
                  asr::GradientSet& grads, std::uint64_t seed) override;

 private:
  const Tensor& teacher_log_probs(const asr::ParameterRegistry& params, const synth::Utterance& utt);

  asr::ModelConfig model_;
  loss::LossConfig losses_;
  Regularizer regularizer_;
  std::map<std::string, Tensor> teacher_cache_;
};

double global_norm(const asr::GradientSet& grads);
// Scales grads in place so the global norm is at most max_norm (0 = off).
void clip_gradients(asr::GradientSet& grads, double max_norm);

// theta <- theta - lr * grad for every unfrozen entry with a gradient.
void sgd_apply(asr::ParameterRegistry& params, const asr::GradientSet& grads, double lr);

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double epsilon = 1e-9)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}
  void apply(asr::ParameterRegistry& params, const asr::GradientSet& grads, double lr);

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct InnerResult {
  asr::ParameterRegistry adapted;  // theta'
  double loss = 0.0;               // mean over the inner steps
};

// theta' = theta - alpha * grad, once per batch in `batches` (inner_steps
// sequential steps). Works on a copy; theta is untouched. Throws
// NonFiniteError on a non-finite loss.
InnerResult inner_update(Objective& objective, const asr::ParameterRegistry& theta,
                         std::span<const std::vector<const synth::Utterance*>> batches, double alpha,
                         double clip_norm, std::uint64_t seed);

// Evaluates the support gradient at theta' and applies it to theta with
// step size beta. Returns the support loss. Throws NonFiniteError.
double outer_update(Objective& objective, asr::ParameterRegistry& theta, const asr::ParameterRegistry& adapted,
                    std::span<const synth::Utterance* const> support, double beta, double clip_norm,
                    std::uint64_t seed);

// Batches of one MAML iteration, as indices into the training pool.
struct MetaIteration {
  std::vector<std::vector<std::size_t>> inner;  // inner_steps batches from the train split
  std::vector<std::size_t> support;
};

// Iteration plan for one epoch: one iteration per support batch, train
// batches drawn cyclically from the shuffled train split.
std::vector<MetaIteration> meta_schedule(const EpochSplit& split, const TrainerConfig& config);

using StepCallback = std::function<void(const StepRecord&)>;

// Trains model.params in place with the configured method and returns one
// record per optimizer step. Sets the registry freeze mask as described in
// TrainerConfig::freeze_policy. WCA and KLD need a registry snapshot.
std::vector<StepRecord> train(const TrainerConfig& config, const loss::LossConfig& losses, asr::AsrModel& model,
                              std::span<const synth::Utterance> data, const StepCallback& on_step = {});

// Same, with an explicit objective.
std::vector<StepRecord> train(const TrainerConfig& config, Objective& objective, asr::ParameterRegistry& params,
                              std::size_t model_dim, std::span<const synth::Utterance> data,
                              const StepCallback& on_step = {});

// One JSON object per line with keys iteration, epoch, method, train_loss,
// support_loss (null when absent), lr, wall_ms, trainable_param_count.
std::string format_step_record(const StepRecord& record);
void write_training_log(std::span<const StepRecord> records, const std::filesystem::path& path);

}  // namespace metaxp::meta
