#include "datamanip/meta_trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace datamanip {

namespace {

bool finite(const ad::Matrix& m) { return m.allFinite(); }

}  // namespace

InnerStep inner_update(const ParamSet& theta, const ParamSet& phi,
                       BilevelObjective& objective, double alpha, bool create_graph) {
  InnerStep out;
  ad::Var loss = objective.training_loss(theta, phi);
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) {
    out.finite = false;
    out.theta_prime = theta;
    return out;
  }
  auto grads = ad::grad(loss, theta.tensors(), create_graph);
  std::vector<ad::Var> next;
  next.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    next.push_back(ad::sub(theta[i], ad::scale(grads[i], alpha)));
  }
  out.theta_prime = theta.with_tensors(std::move(next));
  return out;
}

Hypergradient hypergradient(const ParamSet& theta, const ParamSet& phi,
                            BilevelObjective& objective, double alpha) {
  Hypergradient out;
  InnerStep inner = inner_update(theta, phi, objective, alpha, true);
  out.training_loss = inner.loss;
  if (!inner.finite) {
    out.finite = false;
    return out;
  }
  ad::Var val = objective.validation_loss(inner.theta_prime);
  out.validation_loss = val.item();
  auto grads = ad::grad(val, phi.tensors());
  double sq = 0.0;
  for (auto& g : grads) {
    sq += g.value().squaredNorm();
    out.grads.push_back(g.value());
  }
  out.norm = std::sqrt(sq);
  out.finite = std::isfinite(out.validation_loss) && std::isfinite(out.norm);
  return out;
}

bool meta_update(ParamSet& phi, const Hypergradient& g, double beta) {
  if (!g.finite || g.grads.size() != phi.size()) return false;
  for (const auto& m : g.grads) {
    if (!finite(m)) return false;
  }
  for (std::size_t i = 0; i < phi.size(); ++i) {
    phi.set_value(i, phi[i].value() - beta * g.grads[i]);
  }
  return true;
}

HypergradientCheck hypergradient_check(const ParamSet& theta, const ParamSet& phi,
                                       BilevelObjective& objective, double alpha,
                                       double eps, std::size_t max_coords,
                                       std::uint64_t seed, double floor) {
  if (!(eps > 0.0)) throw std::invalid_argument("hypergradient_check: eps must be > 0");
  const ParamSet theta_leaves = theta.as_leaves();
  auto lookahead_loss = [&](const ParamSet& p) {
    InnerStep inner = inner_update(theta_leaves, p.as_constants(), objective, alpha);
    ad::NoGradGuard no_grad;
    return objective.validation_loss(inner.theta_prime).item();
  };
  if (lookahead_loss(phi) != lookahead_loss(phi)) {
    throw std::runtime_error("hypergradient_check: objective is not deterministic");
  }

  Hypergradient g = hypergradient(theta_leaves, phi.as_leaves(), objective, alpha);
  if (!g.finite) throw std::runtime_error("hypergradient_check: non-finite hypergradient");
  std::vector<double> flat;
  for (const auto& m : g.grads) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) flat.push_back(m(r, c));
    }
  }
  if (flat.size() != phi.scalar_count()) {
    throw std::logic_error("hypergradient_check: flat layout mismatch");
  }

  HypergradientCheck out;
  std::vector<std::size_t> all(flat.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (all.size() > max_coords) {
    Rng rng(derive_seed(seed, "hypergradient-check"));
    rng.shuffle(all.begin(), all.end());
    all.resize(max_coords);
    std::sort(all.begin(), all.end());
  }
  out.coordinates = all;

  ParamSet probe = phi.as_constants();
  for (auto i : all) {
    const double x = probe.coordinate(i);
    probe.set_coordinate(i, x + eps);
    const double up = lookahead_loss(probe);
    probe.set_coordinate(i, x - eps);
    const double down = lookahead_loss(probe);
    probe.set_coordinate(i, x);
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = flat[i];
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.analytic.push_back(analytic);
    out.numeric.push_back(numeric);
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_rel_error = std::max(out.max_rel_error, abs_err / denom);
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* train_mode_name(TrainMode mode) {
  return mode == TrainMode::vanilla ? "vanilla" : "manipulated";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "vanilla") return TrainMode::vanilla;
  if (name == "manipulated") return TrainMode::manipulated;
  throw std::invalid_argument("unknown mode: " + std::string(name));
}

ManipulatedLoss manipulated_loss(const DialogueModel& model, const ParamSet& theta,
                                 const ManipulationNet& net, const ParamSet& phi,
                                 const Batch& batch, double tau, std::uint64_t noise_seed,
                                 const Vocabulary* vocab) {
  ManipulatedLoss out;
  Rng rng(noise_seed);
  out.batch = net.augment_batch(phi, batch, tau, true, rng, vocab);
  out.weights = net.weigh(phi, out.batch);
  out.nll = model.per_sample_nll(theta, out.batch.seq_batch(model.vocab_size()));
  out.loss = weighted_loss(out.nll, out.weights.weights);
  return out;
}

ad::Var vanilla_loss(const DialogueModel& model, const ParamSet& theta, const Batch& batch,
                     WeightNorm norm) {
  ad::Var nll = model.per_sample_nll(theta, make_seq_batch(batch, model.vocab_size()));
  return weighted_loss(nll, uniform_weights(static_cast<int>(batch.size()), norm));
}

ad::Var DialogueObjective::training_loss(const ParamSet& theta, const ParamSet& phi) {
  if (net_ == nullptr) return vanilla_loss(model_, theta, train_, norm_);
  last_ = manipulated_loss(model_, theta, *net_, phi, train_, tau_, noise_seed_, vocab_);
  return last_->loss;
}

ad::Var DialogueObjective::validation_loss(const ParamSet& theta) {
  return mean_nll(model_, theta, make_seq_batch(valid_, model_.vocab_size()));
}

const char* meta_optimizer_name(MetaOptimizer opt) {
  return opt == MetaOptimizer::sgd ? "sgd" : "adam";
}

MetaOptimizer parse_meta_optimizer(std::string_view name) {
  if (name == "sgd") return MetaOptimizer::sgd;
  if (name == "adam") return MetaOptimizer::adam;
  throw std::invalid_argument("unknown meta optimizer: " + std::string(name));
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be >= 0");
  if (train_batch < 1 || valid_batch < 1) throw std::invalid_argument("batch sizes must be >= 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (meta_period < 1) throw std::invalid_argument("meta_period must be >= 1");
  if (!(tau > 0.0) || !(tau_final > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (eval_interval < 0 || checkpoint_interval < 0) {
    throw std::invalid_argument("intervals must be >= 0");
  }
  if (!(divergence_factor > 0.0) || divergence_patience < 1) {
    throw std::invalid_argument("invalid divergence settings");
  }
  model.validate(arch);
  manipulation.validate();
}

double TrainConfig::tau_at(int iteration) const {
  if (tau == tau_final || iterations <= 1) return tau;
  const double frac = static_cast<double>(iteration - 1) / static_cast<double>(iterations - 1);
  return tau + (tau_final - tau) * std::clamp(frac, 0.0, 1.0);
}

std::string IterationRecord::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["tau"] = tau;
  j["l_dm"] = l_dm;
  j["valid_nll"] = valid_nll;
  j["meta"] = meta;
  j["meta_skipped"] = meta_skipped;
  j["aborted"] = aborted;
  j["hypergrad_norm"] = hypergrad_norm;
  j["lookahead_valid_nll"] = lookahead_valid_nll;
  j["n_instances"] = n_instances;
  j["n_augmented"] = n_augmented;
  j["mean_weight_original"] = mean_weight_original;
  j["mean_weight_word"] = mean_weight_word;
  j["mean_weight_sent"] = mean_weight_sent;
  j["mean_weight_clean"] = mean_weight_clean;
  j["mean_weight_noisy"] = mean_weight_noisy;
  if (valid_nll_full) j["valid_nll_full"] = *valid_nll_full;
  return j.dump();
}

Trainer::Trainer(const Corpus& corpus, const TrainConfig& config, int vocab_size,
                 bool pretrain)
    : corpus_(corpus),
      config_(config),
      vocab_size_(vocab_size),
      train_it_(corpus.train, config.train_batch, derive_seed(config.seed, "batching")),
      valid_it_(corpus.valid, config.valid_batch, derive_seed(config.seed, "validation")),
      meta_adam_(config.beta) {
  config_.validate();
  if (corpus.train.empty() || corpus.valid.empty()) {
    throw std::invalid_argument("training needs non-empty train and valid splits");
  }
  auto built = build_model(config_.arch, config_.model, vocab_size, derive_seed(config_.seed, "model"));
  model_ = std::move(built.model);
  theta_ = std::move(built.params);
  if (config_.mode == TrainMode::manipulated) {
    net_ = std::make_unique<ManipulationNet>(vocab_size, config_.manipulation,
                                             derive_seed(config_.seed, "manipulation"));
    if (pretrain && config_.manipulation.gate_mode != GateMode::closed) {
      net_->pretrain(corpus.train, derive_seed(config_.seed, "pretrain"));
    }
  }
  state_.initial_valid_nll = full_validation_nll();
}

void Trainer::set_logs(const TrainLogs& logs) { logs_ = logs; }

void Trainer::write_log_headers(const TrainLogs& logs) {
  if (logs.augmentation) {
    *logs.augmentation << "iteration\tid\tgate\tdecision\taugmenter\tflagged\tquery\tresponse\n";
  }
  if (logs.weights) {
    *logs.weights << "iteration\tposition\tid\tparent\torigin\tscore\tweight\trelative_weight\n";
  }
  if (logs.timing) *logs.timing << "iteration\tseconds\n";
}

TrainerState Trainer::state() const {
  TrainerState s = state_;
  s.meta_adam = meta_adam_.state();
  return s;
}

bool Trainer::done() const { return diverged_ || state_.iteration >= config_.iterations; }

double Trainer::full_validation_nll() const {
  ad::NoGradGuard no_grad;
  const ParamSet theta = theta_.as_constants();
  double total = 0.0;
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < corpus_.valid.size(); i += chunk) {
    const auto n = std::min(chunk, corpus_.valid.size() - i);
    const auto first = corpus_.valid.begin() + static_cast<std::ptrdiff_t>(i);
    Batch b = Batch::from_pairs({first, first + static_cast<std::ptrdiff_t>(n)});
    total += ad::sum(model_->per_sample_nll(theta, make_seq_batch(b, vocab_size_))).item();
  }
  return total / static_cast<double>(corpus_.valid.size());
}

void Trainer::restore(const TrainerState& state) {
  train_it_ = BatchIterator(corpus_.train, config_.train_batch, derive_seed(config_.seed, "batching"));
  valid_it_ = BatchIterator(corpus_.valid, config_.valid_batch, derive_seed(config_.seed, "validation"));
  for (int i = 0; i < state.iteration; ++i) {
    train_it_.next();
    valid_it_.next();
  }
  state_ = state;
  meta_adam_.set_state(state.meta_adam);
  diverged_ = state.divergence_run >= config_.divergence_patience;
}

namespace {

double mean_or_nan(double sum, int count) {
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void Trainer::record_uniform(IterationRecord& rec, const Batch& batch, int iteration) {
  const int n = static_cast<int>(batch.size());
  const double w = config_.manipulation.weights.norm == WeightNorm::sum_to_one ? 1.0 / n : 1.0;
  rec.n_instances = n;
  rec.mean_weight_original = 1.0;
  int clean = 0, noisy = 0;
  for (int j = 0; j < n; ++j) {
    const auto& p = batch.pairs[static_cast<std::size_t>(j)];
    auto& s = stats_[p.id];
    s.seen += 1;
    s.last_weight = 1.0;
    s.last_iteration = iteration;
    (noisy_.count(p.id) ? noisy : clean) += 1;
    if (logs_.weights) {
      *logs_.weights << iteration << '\t' << j << '\t' << p.id << "\t-\toriginal\t0\t" << w
                     << "\t1\n";
    }
  }
  if (!noisy_.empty()) {
    rec.mean_weight_clean = clean > 0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
    rec.mean_weight_noisy = noisy > 0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  }
}

void Trainer::record_instances(IterationRecord& rec, const ManipulatedLoss& out, int iteration) {
  const auto& b = out.batch;
  const auto n = static_cast<int>(b.size());
  const int active = static_cast<int>(b.originals + b.augmented());
  rec.n_instances = active;
  rec.n_augmented = static_cast<int>(b.augmented());
  const ad::Matrix& w = out.weights.weights.value();
  double sums[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  double clean_sum = 0, noisy_sum = 0;
  int clean_n = 0, noisy_n = 0;
  for (int j = 0; j < n; ++j) {
    if (!b.included[static_cast<std::size_t>(j)]) continue;  // weight exactly 0
    const double rel = w(j, 0) * active;
    const auto& p = b.pairs[static_cast<std::size_t>(j)];
    const int o = static_cast<int>(b.origins[static_cast<std::size_t>(j)]);
    sums[o] += rel;
    counts[o] += 1;
    if (b.origins[static_cast<std::size_t>(j)] == Origin::original) {
      auto& s = stats_[p.id];
      s.seen += 1;
      s.augmented += b.decisions[static_cast<std::size_t>(j)].augment ? 1 : 0;
      s.last_weight = rel;
      s.last_iteration = iteration;
      if (noisy_.count(p.id)) {
        noisy_sum += rel;
        ++noisy_n;
      } else {
        clean_sum += rel;
        ++clean_n;
      }
    }
    if (logs_.weights) {
      *logs_.weights << iteration << '\t' << j << '\t' << p.id << '\t';
      if (p.parent_id) *logs_.weights << *p.parent_id; else *logs_.weights << '-';
      *logs_.weights << '\t' << origin_name(p.origin) << '\t' << out.weights.scores(j, 0) << '\t'
                     << w(j, 0) << '\t' << rel << '\n';
    }
  }
  rec.mean_weight_original = mean_or_nan(sums[0], counts[0]);
  rec.mean_weight_word = mean_or_nan(sums[1], counts[1]);
  rec.mean_weight_sent = mean_or_nan(sums[2], counts[2]);
  if (!noisy_.empty()) {
    rec.mean_weight_clean = mean_or_nan(clean_sum, clean_n);
    rec.mean_weight_noisy = mean_or_nan(noisy_sum, noisy_n);
  }
  if (logs_.augmentation) {
    for (const auto& d : b.decisions) {
      *logs_.augmentation << iteration << '\t' << d.id << '\t' << d.gate << '\t'
                          << (d.augment ? "augment" : "keep") << '\t' << augmenter_name(d.augmenter)
                          << '\t' << (d.flagged ? 1 : 0) << '\t' << d.query_text << '\t'
                          << d.response_text << '\n';
    }
  }
}

bool Trainer::apply_meta_step(const Hypergradient& g) {
  ParamSet& phi = net_->params();
  if (!g.finite || g.grads.size() != phi.size()) return false;
  for (const auto& m : g.grads) {
    if (!finite(m)) return false;
  }
  const std::size_t core = net_->core_size();
  const double aug_beta = config_.augmenter_beta < 0.0 ? config_.beta : config_.augmenter_beta;
  for (std::size_t i = core; i < phi.size(); ++i) {
    phi.set_value(i, phi[i].value() - aug_beta * g.grads[i]);
  }
  if (config_.meta_optimizer == MetaOptimizer::sgd) {
    for (std::size_t i = 0; i < core; ++i) {
      phi.set_value(i, phi[i].value() - config_.beta * g.grads[i]);
    }
    return true;
  }
  ParamSet part = phi.slice(0, core);
  meta_adam_.step(part, std::vector<ad::Matrix>(g.grads.begin(), g.grads.begin() + static_cast<std::ptrdiff_t>(core)));
  for (std::size_t i = 0; i < core; ++i) phi.set_value(i, part[i].value());
  return true;
}

IterationRecord Trainer::step() {
  if (done()) throw std::logic_error("Trainer::step called after training finished");
  const auto start = std::chrono::steady_clock::now();
  const int t = state_.iteration + 1;
  IterationRecord rec;
  rec.iteration = t;
  rec.tau = config_.tau_at(t);

  Batch train_batch = train_it_.next();
  Batch valid_batch = valid_it_.next();
  DialogueObjective objective(*model_, net_.get(), config_.manipulation.weights.norm);
  objective.set_batches(train_batch, valid_batch);
  objective.set_noise(rec.tau, derive_seed(config_.seed, "gumbel", static_cast<std::uint64_t>(t)));
  objective.set_vocabulary(vocab_);

  if (net_ && t % config_.meta_period == 0) {
    rec.meta = true;
    Hypergradient g = hypergradient(theta_.as_leaves(), net_->params().as_leaves(), objective,
                                    config_.alpha);
    rec.hypergrad_norm = g.norm;
    rec.lookahead_valid_nll = g.validation_loss;
    rec.meta_skipped = !apply_meta_step(g);
  }

  ParamSet phi = net_ ? net_->params().as_constants() : ParamSet{};
  InnerStep inner = inner_update(theta_.as_leaves(), phi, objective, config_.alpha);
  rec.l_dm = inner.loss;
  if (inner.finite) {
    for (std::size_t i = 0; i < theta_.size(); ++i) {
      theta_.set_value(i, inner.theta_prime[i].value());
    }
  } else {
    rec.aborted = true;
  }
  if (net_ && objective.last()) {
    record_instances(rec, *objective.last(), t);
  } else {
    record_uniform(rec, train_batch, t);
  }

  {
    ad::NoGradGuard no_grad;
    rec.valid_nll = objective.validation_loss(theta_.as_constants()).item();
  }
  state_.iteration = t;
  if (!(rec.valid_nll <= config_.divergence_factor * state_.initial_valid_nll)) {
    state_.divergence_run += 1;
  } else {
    state_.divergence_run = 0;
  }
  diverged_ = state_.divergence_run >= config_.divergence_patience;

  const bool eval_now = (config_.eval_interval > 0 && t % config_.eval_interval == 0) ||
                        t == config_.iterations || diverged_;
  if (eval_now) rec.valid_nll_full = full_validation_nll();

  if (logs_.report) *logs_.report << rec.to_json() << '\n';
  if (logs_.timing) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    *logs_.timing << t << '\t' << dt.count() << '\n';
  }
  return rec;
}

TrainResult run(Trainer& trainer, const TrainHooks& hooks) {
  trainer.set_logs(hooks.logs);
  trainer.set_vocabulary(hooks.vocab);
  trainer.set_noisy_ids(hooks.noisy_ids);
  TrainResult result;
  const int interval = trainer.config().checkpoint_interval;
  while (!trainer.done()) {
    result.records.push_back(trainer.step());
    if (hooks.checkpoint && interval > 0 && trainer.iteration() % interval == 0) {
      hooks.checkpoint(trainer);
    }
  }
  result.stopped_early = trainer.diverged();
  result.instances = trainer.instances();
  if (!result.records.empty() && result.records.back().valid_nll_full) {
    result.final_valid_nll = *result.records.back().valid_nll_full;
  } else {
    result.final_valid_nll = trainer.full_validation_nll();
  }
  return result;
}

TrainResult train(const Corpus& corpus, const TrainConfig& config, int vocab_size,
                  const TrainHooks& hooks) {
  Trainer trainer(corpus, config, vocab_size);
  Trainer::write_log_headers(hooks.logs);
  return run(trainer, hooks);
}

}  // namespace datamanip
