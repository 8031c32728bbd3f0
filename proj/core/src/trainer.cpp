#include "dualseg/trainer.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dualseg {
namespace {

void log_line(const FitOptions& options, const nlohmann::json& j) {
  if (options.log) *options.log << j.dump() << '\n';
}

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteLoss, std::string(term) + " is " + std::to_string(v));
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, "train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (max_steps < 1) fail("max_steps must be >= 1");
  if (batch_labeled < 1 || batch_unlabeled < 1) fail("batch sizes must be >= 1");
  if (eval_every < 0) fail("eval_every must be >= 0");
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},     {"max_steps", c.max_steps},
       {"batch_labeled", c.batch_labeled}, {"batch_unlabeled", c.batch_unlabeled}, {"seed", c.seed},
       {"eval_every", c.eval_every},       {"weights", c.weights},               {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},       {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.batch_labeled = j.value("batch_labeled", d.batch_labeled);
  c.batch_unlabeled = j.value("batch_unlabeled", d.batch_unlabeled);
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.weights = j.contains("weights") ? j.at("weights").get<LossWeights>() : d.weights;
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
}

TrainState::TrainState(const NetworkConfig& net_config, std::uint64_t seed) : net(net_config, seed), rng(seed) {
  for (Param<float>* p : net.trainable_parameters()) {
    adam_m.emplace_back(p->value.shape());
    adam_v.emplace_back(p->value.shape());
  }
}

void adam_update(TrainState& state, const TrainConfig& config) {
  const ParamRefs<float> params = state.net.trainable_parameters();
  const double t = static_cast<double>(state.step + 1);
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  const double lr = config.learning_rate;
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<float>& p = *params[i];
    float* m = state.adam_m[i].data();
    float* v = state.adam_v[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      const double mk = b1 * m[k] + (1.0 - b1) * g;
      const double vk = b2 * v[k] + (1.0 - b2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + config.adam_eps);
      p.value[k] = static_cast<float>(p.value[k] * decay - lr * update);
    }
  }
}

LossReport train_step(TrainState& state, const Batch& batch, const TrainConfig& config) {
  const int nl = static_cast<int>(batch.labeled.size());
  const int nu = static_cast<int>(batch.unlabeled.size());
  if (nl == 0) throw Error(Errc::EmptyLabeledBatch, "batch has no labeled records");

  std::vector<const SliceRecord*> all(batch.labeled);
  all.insert(all.end(), batch.unlabeled.begin(), batch.unlabeled.end());
  auto [xa, xb] = stack_images<float>(all);
  const MaskBatch masks = stack_masks(batch.labeled);

  DualBranchNet<float>& net = state.net;
  net.zero_grad();
  const DualPrediction<float> pred = net.forward(xa, xb, Mode::Train);

  Tensor<float> dprob_a(pred.probs_a.shape());
  Tensor<float> dprob_b(pred.probs_b.shape());

  Tensor<float> ga;
  Tensor<float> gb;
  const SupervisedLoss sup = supervised_loss(slice_batch(pred.probs_a, 0, nl), slice_batch(pred.probs_b, 0, nl), masks,
                                             config.weights, &ga, &gb);
  assign_batch(dprob_a, 0, ga);
  assign_batch(dprob_b, 0, gb);

  double cons = 0.0;
  if (nu > 0) {
    Tensor<float> ca;
    Tensor<float> cb;
    cons = consistency_loss(slice_batch(pred.probs_a, nl, nu), slice_batch(pred.probs_b, nl, nu), &ca, &cb);
    const auto lambda = static_cast<float>(config.weights.lambda_cons);
    for (std::size_t i = 0; i < ca.size(); ++i) {
      ca[i] *= lambda;
      cb[i] *= lambda;
    }
    assign_batch(dprob_a, nl, ca);
    assign_batch(dprob_b, nl, cb);
  }

  LossReport report;
  report.l_ce_a = sup.ce_a;
  report.l_ce_b = sup.ce_b;
  report.l_dice_a = sup.dice_a;
  report.l_dice_b = sup.dice_b;
  report.l_sup_total = sup.total;
  report.l_cons = cons;
  require_finite(report.l_ce_a, "l_ce_a");
  require_finite(report.l_ce_b, "l_ce_b");
  require_finite(report.l_dice_a, "l_dice_a");
  require_finite(report.l_dice_b, "l_dice_b");
  require_finite(report.l_cons, "l_cons");
  report.l_final = final_loss(report.l_sup_total, report.l_cons, config.weights);

  net.backward(softmax_channels_backward(pred.probs_a, dprob_a), softmax_channels_backward(pred.probs_b, dprob_b));
  adam_update(state, config);
  ++state.step;

  for (Param<float>* p : net.parameters()) {
    if (!p->value.all_finite()) throw Error(Errc::NonFiniteLoss, "parameter " + p->name + " became non-finite");
  }
  return report;
}

TrainHistory resume_fit(TrainState& state, const DatasetSplit& split, const TrainConfig& config,
                        const FitOptions& options) {
  config.validate();
  if (split.labeled.empty()) throw Error(Errc::EmptyLabeledSet, "split has no labeled records");

  TrainHistory history;
  auto run_eval = [&](std::int64_t step) {
    EvalRecord rec{step, evaluate(state.net, split.test)};
    log_line(options, {{"type", "eval"}, {"step", step}, {"dice", rec.metrics.mean_dice}, {"sens", rec.metrics.mean_sens}});
    if (rec.metrics.mean_dice > state.best_val_dice) {
      state.best_val_dice = rec.metrics.mean_dice;
      if (options.work_dir) save_checkpoint(state, *options.work_dir / "best.ckpt");
    }
    history.evals.push_back(std::move(rec));
  };

  std::vector<Batch> batches;
  while (state.step < config.max_steps) {
    if (state.batch_cursor == 0 || batches.empty()) {
      if (state.batch_cursor == 0) state.epoch_seed = state.rng();
      batches = make_batches(split, config.batch_labeled, config.batch_unlabeled, state.epoch_seed, state.epoch);
    }
    const LossReport report = train_step(state, batches[state.batch_cursor], config);
    if (++state.batch_cursor == batches.size()) {
      state.batch_cursor = 0;
      ++state.epoch;
      batches.clear();
    }
    history.steps.push_back(report);
    nlohmann::json line = report;
    line["type"] = "step";
    line["step"] = state.step;
    log_line(options, line);
    if (options.on_step) options.on_step(state.step, report);

    const bool last = state.step == config.max_steps;
    if (!split.test.empty() && ((config.eval_every > 0 && state.step % config.eval_every == 0) || last)) {
      run_eval(state.step);
    }
  }
  if (options.work_dir) save_checkpoint(state, *options.work_dir / "last.ckpt");
  return history;
}

FitResult fit(const DatasetSplit& split, const NetworkConfig& net_config, const TrainConfig& train_config,
              const FitOptions& options) {
  FitResult result{TrainState(net_config, train_config.seed), {}};
  result.history = resume_fit(result.state, split, train_config, options);
  return result;
}

}  // namespace dualseg
