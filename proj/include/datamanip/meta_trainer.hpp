#pragma once

// Joint training of the dialogue model theta and the manipulation network
// phi: an inner SGD step on the manipulated batch, and a meta step on phi
// from the validation loss of the one-step lookahead theta'.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "datamanip/corpus.hpp"
#include "datamanip/dialogue_model.hpp"
#include "datamanip/manipulation.hpp"
#include "datamanip/params.hpp"

namespace datamanip {

// Anything with a phi-dependent training loss and a validation loss.
class BilevelObjective {
 public:
  virtual ~BilevelObjective() = default;
  virtual ad::Var training_loss(const ParamSet& theta, const ParamSet& phi) = 0;
  virtual ad::Var validation_loss(const ParamSet& theta) = 0;
};

struct InnerStep {
  ParamSet theta_prime;
  double loss = 0.0;
  bool finite = true;
};

// theta' = theta - alpha * grad_theta L(theta, phi). `theta` must hold
// leaves. With `create_graph`, theta' stays a differentiable function of phi
// (when phi holds leaves). A non-finite loss returns theta unchanged with
// finite = false.
InnerStep inner_update(const ParamSet& theta, const ParamSet& phi,
                       BilevelObjective& objective, double alpha,
                       bool create_graph = false);

struct Hypergradient {
  std::vector<ad::Matrix> grads;  // one per phi tensor
  double training_loss = 0.0;
  double validation_loss = 0.0;
  double norm = 0.0;
  bool finite = true;
};

// d L_val(theta'(phi)) / d phi through one inner step.
Hypergradient hypergradient(const ParamSet& theta, const ParamSet& phi,
                            BilevelObjective& objective, double alpha);

// phi <- phi - beta * g. Returns false, leaving phi untouched, when g is not
// finite.
bool meta_update(ParamSet& phi, const Hypergradient& g, double beta);

struct HypergradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::vector<std::size_t> coordinates;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Compares the analytic hypergradient with central differences on at most
// `max_coords` coordinates of phi (all of them if phi is smaller). Relative
// error is |a - n| / max(|a|, |n|, floor). Throws std::runtime_error when the
// objective is not deterministic.
HypergradientCheck hypergradient_check(const ParamSet& theta, const ParamSet& phi,
                                       BilevelObjective& objective, double alpha,
                                       double eps = 1e-4, std::size_t max_coords = 50,
                                       std::uint64_t seed = 0, double floor = 1e-6);

// ---------------------------------------------------------------------------
// The dialogue objective.

enum class TrainMode { vanilla, manipulated };
enum class MetaOptimizer { sgd, adam };
const char* train_mode_name(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);
const char* meta_optimizer_name(MetaOptimizer opt);
MetaOptimizer parse_meta_optimizer(std::string_view name);

struct ManipulatedLoss {
  ad::Var loss;
  ad::Var nll;  // N' x 1
  WeightVector weights;
  AugmentedBatch batch;
};

// L_dm = sum_j w_j m_j nll_j over the augmented batch, m_j the inclusion
// multiplier.
ManipulatedLoss manipulated_loss(const DialogueModel& model, const ParamSet& theta,
                                 const ManipulationNet& net, const ParamSet& phi,
                                 const Batch& batch, double tau, std::uint64_t noise_seed,
                                 const Vocabulary* vocab = nullptr);

// Uniform weights under `norm`, no augmentation.
ad::Var vanilla_loss(const DialogueModel& model, const ParamSet& theta,
                     const Batch& batch, WeightNorm norm);

class DialogueObjective final : public BilevelObjective {
 public:
  // `net` null means vanilla training.
  DialogueObjective(const DialogueModel& model, const ManipulationNet* net,
                    WeightNorm norm)
      : model_(model), net_(net), norm_(norm) {}

  void set_batches(Batch train, Batch valid) {
    train_ = std::move(train);
    valid_ = std::move(valid);
  }
  // The gumbel/gate noise of every training_loss call is drawn from this
  // seed, so repeated evaluations share random numbers.
  void set_noise(double tau, std::uint64_t seed) {
    tau_ = tau;
    noise_seed_ = seed;
  }
  void set_vocabulary(const Vocabulary* vocab) { vocab_ = vocab; }

  ad::Var training_loss(const ParamSet& theta, const ParamSet& phi) override;
  ad::Var validation_loss(const ParamSet& theta) override;

  // Details of the most recent manipulated training_loss call.
  const std::optional<ManipulatedLoss>& last() const { return last_; }

 private:
  const DialogueModel& model_;
  const ManipulationNet* net_;
  WeightNorm norm_;
  Batch train_, valid_;
  double tau_ = 1.0;
  std::uint64_t noise_seed_ = 0;
  const Vocabulary* vocab_ = nullptr;
  std::optional<ManipulatedLoss> last_;
};

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
  TrainMode mode = TrainMode::manipulated;
  Architecture arch = Architecture::seq2seq;
  ModelDims model{32, 32, 1, 4, 64, kDefaultMaxSequenceLength, false};
  ManipulationConfig manipulation;

  double alpha = 0.1;   // inner step size
  double beta = 0.003;  // meta step size
  MetaOptimizer meta_optimizer = MetaOptimizer::adam;
  // Plain SGD step for the MLM and translator tensors; negative means beta.
  // 0 keeps the pretrained augmenters fixed.
  double augmenter_beta = 0.0;
  int train_batch = 16;
  int valid_batch = 32;
  int iterations = 3000;
  int meta_period = 1;
  double tau = 1.0;
  double tau_final = 1.0;  // linear anneal from tau when different
  std::uint64_t seed = 1;
  int eval_interval = 0;        // full validation NLL every k iterations; 0 = end only
  int checkpoint_interval = 0;  // 0 = none
  double divergence_factor = 10.0;
  int divergence_patience = 100;

  void validate() const;
  double tau_at(int iteration) const;
};

// Relative weights are w_j * N', so 1 means "uniform".
struct IterationRecord {
  int iteration = 0;
  double tau = 1.0;
  double l_dm = 0.0;
  double valid_nll = 0.0;
  bool meta = false;
  bool meta_skipped = false;
  bool aborted = false;  // non-finite training loss, theta not updated
  double hypergrad_norm = 0.0;
  double lookahead_valid_nll = 0.0;
  int n_instances = 0;
  int n_augmented = 0;
  double mean_weight_original = std::numeric_limits<double>::quiet_NaN();
  double mean_weight_word = std::numeric_limits<double>::quiet_NaN();
  double mean_weight_sent = std::numeric_limits<double>::quiet_NaN();
  double mean_weight_clean = std::numeric_limits<double>::quiet_NaN();
  double mean_weight_noisy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> valid_nll_full;

  std::string to_json() const;
};

struct InstanceStat {
  int seen = 0;
  int augmented = 0;
  double last_weight = 0.0;  // relative weight at the last appearance
  int last_iteration = 0;
};

struct TrainLogs {
  std::ostream* report = nullptr;        // JSONL, one record per iteration
  std::ostream* augmentation = nullptr;  // TSV
  std::ostream* weights = nullptr;       // TSV
  std::ostream* timing = nullptr;        // TSV, wall-clock per iteration
};

// Restorable trainer state (parameters excluded).
struct TrainerState {
  int iteration = 0;
  double initial_valid_nll = 0.0;
  int divergence_run = 0;
  AdamState meta_adam;
};

class Trainer {
 public:
  // Builds theta, and in manipulated mode phi, then pretrains the
  // augmentation models on the training split. Restoring from a checkpoint
  // overwrites phi, so it can skip pretraining.
  Trainer(const Corpus& corpus, const TrainConfig& config, int vocab_size,
          bool pretrain = true);

  void set_logs(const TrainLogs& logs);
  void set_vocabulary(const Vocabulary* vocab) { vocab_ = vocab; }
  // Ids of noisy training pairs, for the clean/noisy weight statistics.
  void set_noisy_ids(std::set<std::int64_t> ids) { noisy_ = std::move(ids); }

  IterationRecord step();
  bool done() const;
  bool diverged() const { return diverged_; }
  int iteration() const { return state_.iteration; }

  double full_validation_nll() const;

  const TrainConfig& config() const { return config_; }
  const DialogueModel& model() const { return *model_; }
  ParamSet& theta() { return theta_; }
  const ParamSet& theta() const { return theta_; }
  ManipulationNet* net() { return net_.get(); }
  const ManipulationNet* net() const { return net_.get(); }
  const std::map<std::int64_t, InstanceStat>& instances() const { return stats_; }

  TrainerState state() const;
  // Restores counters and fast-forwards the batch streams; parameters are
  // set separately through theta() and net()->params().
  void restore(const TrainerState& state);

  static void write_log_headers(const TrainLogs& logs);

 private:
  void record_instances(IterationRecord& rec, const ManipulatedLoss& out, int iteration);
  bool apply_meta_step(const Hypergradient& g);
  void record_uniform(IterationRecord& rec, const Batch& batch, int iteration);

  const Corpus& corpus_;
  TrainConfig config_;
  int vocab_size_;
  std::unique_ptr<DialogueModel> model_;
  ParamSet theta_;
  std::unique_ptr<ManipulationNet> net_;
  BatchIterator train_it_, valid_it_;
  TrainerState state_;
  bool diverged_ = false;
  TrainLogs logs_;
  const Vocabulary* vocab_ = nullptr;
  std::set<std::int64_t> noisy_;
  std::map<std::int64_t, InstanceStat> stats_;
  Adam meta_adam_{1.0};
};

struct TrainResult {
  std::vector<IterationRecord> records;
  std::map<std::int64_t, InstanceStat> instances;
  double final_valid_nll = 0.0;
  bool stopped_early = false;
};

struct TrainHooks {
  TrainLogs logs;
  const Vocabulary* vocab = nullptr;
  std::set<std::int64_t> noisy_ids;
  std::function<void(const Trainer&)> checkpoint;  // every checkpoint_interval
};

TrainResult train(const Corpus& corpus, const TrainConfig& config, int vocab_size,
                  const TrainHooks& hooks = {});
// Same loop on an existing trainer (e.g. one restored from a checkpoint).
TrainResult run(Trainer& trainer, const TrainHooks& hooks = {});

}  // namespace datamanip
