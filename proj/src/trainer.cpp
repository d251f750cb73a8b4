#include "cs3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "cs3d/ops.hpp"
#include "cs3d/random.hpp"

namespace cs3d {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw TrainingError("learning_rate must be > 0");
  if (batch_size == 0) throw TrainingError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw TrainingError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw TrainingError("adam epsilon must be > 0");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const Shape& s = logits.shape();
  if (s.rank() != 2) throw ShapeError("cross_entropy expects [B,K] logits, got " + s.str());
  const std::size_t b = s[0];
  const std::size_t k = s[1];
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(b));
  }
  for (auto l : labels) {
    if (l >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(k) + ")");
    }
  }
  const auto x = logits.data();
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(b * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = &x[i * k];
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx - log_z);
    loss += log_z - (row[labels[i]] - mx);
  }
  loss /= static_cast<double>(b);
  return make_result("cross_entropy", Shape{1}, {loss}, {logits},
                     [probs, labels, b, k](const TensorImpl& out, const GradSink& g) {
                       const double scale = out.grad[0] / static_cast<double>(b);
                       double* gx = g.grad(0);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = j == labels[i] ? 1.0 : 0.0;
                           gx[i * k + j] += scale * ((*probs)[i * k + j] - onehot);
                         }
                       }
                     });
}

AdamState AdamState::for_params(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state, const TrainConfig& cfg, std::size_t t) {
  if (t == 0) throw TrainingError("adam step index must be >= 1");
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: params, grads and moments differ in count");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const auto g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size() || v.size() != w.size() || (!g.empty() && g.size() != w.size())) {
      throw ShapeError("adam_step: moment or gradient shape mismatch for parameter " +
                       std::to_string(i));
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  state.step = t;
}

Metrics compute_metrics(const std::vector<std::size_t>& predictions,
                        const std::vector<std::size_t>& labels, std::size_t class_count) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("compute_metrics: prediction and label counts differ");
  }
  if (labels.empty()) throw TrainingError("metrics of an empty dataset");
  Metrics m;
  m.total = labels.size();
  m.confusion.assign(class_count, std::vector<std::size_t>(class_count, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count || predictions[i] >= class_count) {
      throw std::out_of_range("compute_metrics: class index out of range");
    }
    ++m.confusion[labels[i]][predictions[i]];
    if (labels[i] == predictions[i]) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  for (std::size_t c = 0; c < class_count; ++c) {
    std::size_t row = 0;
    for (auto n : m.confusion[c]) row += n;
    m.per_class_accuracy.push_back(row == 0 ? std::numeric_limits<double>::quiet_NaN()
                                            : static_cast<double>(m.confusion[c][c]) /
                                                  static_cast<double>(row));
  }
  return m;
}

void Metrics::write_csv(std::ostream& os) const {
  os << "metric,value\n";
  os << "accuracy," << accuracy << "\n";
  os << "samples," << total << "\n";
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) {
    os << "class_" << c << "_accuracy," << per_class_accuracy[c] << "\n";
  }
  os << "\ntrue\\predicted";
  for (std::size_t c = 0; c < confusion.size(); ++c) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    os << r;
    for (auto n : confusion[r]) os << ',' << n;
    os << '\n';
  }
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.rank() != 2) throw ShapeError("argmax_rows expects [B,K], got " + s.str());
  std::vector<std::size_t> out(s[0]);
  const auto x = logits.data();
  for (std::size_t i = 0; i < s[0]; ++i) {
    const double* row = &x[i * s[1]];
    out[i] = static_cast<std::size_t>(std::max_element(row, row + s[1]) - row);
  }
  return out;
}

void TrainingHistory::write_csv(std::ostream& os) const {
  os.precision(17);
  os << "epoch,train_loss,eval_accuracy\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.eval_accuracy << '\n';
  }
}

void TrainingHistory::save_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw TrainingError("cannot write history " + path.string());
  write_csv(os);
}

Tensor make_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t first,
                  std::size_t last, std::vector<std::size_t>& labels) {
  std::vector<Tensor> items;
  labels.clear();
  for (std::size_t i = first; i < last; ++i) {
    const Sample& s = data.samples[order[i]];
    items.push_back(s.input);
    labels.push_back(s.label);
  }
  return stack(items);
}

Metrics evaluate(Model& m, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw TrainingError("cannot evaluate on an empty dataset");
  if (batch_size == 0) batch_size = 1;
  NoGradGuard no_grad;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> batch_labels;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t last = std::min(first + batch_size, data.size());
    const Tensor logits = m.forward(make_batch(data, order, first, last, batch_labels), Mode::kEval);
    const auto p = argmax_rows(logits);
    predictions.insert(predictions.end(), p.begin(), p.end());
    labels.insert(labels.end(), batch_labels.begin(), batch_labels.end());
  }
  return compute_metrics(predictions, labels, m.config().class_count);
}

void recalibrate_batchnorm(Model& m, const Dataset& data, std::size_t batch_size) {
  auto bns = m.batchnorms();
  if (bns.empty() || data.empty()) return;
  if (batch_size == 0) batch_size = 1;
  std::vector<double> saved;
  for (auto* bn : bns) {
    saved.push_back(bn->momentum);
    for (auto& v : bn->running_mean.mutable_data()) v = 0.0;
    for (auto& v : bn->running_var.mutable_data()) v = 0.0;
  }
  NoGradGuard no_grad;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> labels;
  std::size_t k = 0;
  for (std::size_t first = 0; first < data.size(); first += batch_size, ++k) {
    // Momentum 1/(k+1) turns the running update into a cumulative mean.
    for (auto* bn : bns) bn->momentum = 1.0 / static_cast<double>(k + 1);
    const std::size_t last = std::min(first + batch_size, data.size());
    m.forward(make_batch(data, order, first, last, labels), Mode::kTrain);
  }
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i]->momentum = saved[i];
}

namespace {

std::vector<Tensor> snapshot(const std::vector<NamedTensor>& state) {
  std::vector<Tensor> out;
  for (const auto& e : state) out.push_back(e.tensor.clone());
  return out;
}

void restore(const std::vector<NamedTensor>& state, const std::vector<Tensor>& saved) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto dst = state[i].tensor.impl()->data.begin();
    const auto src = saved[i].data();
    std::copy(src.begin(), src.end(), dst);
  }
}

}  // namespace

TrainingHistory train(Model& m, const Dataset& data, const Dataset& eval, const TrainConfig& cfg,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw TrainingError("cannot train on an empty dataset");
  const Dataset& held_out = eval.empty() ? data : eval;

  const auto named = m.parameters();
  std::vector<Tensor> params;
  for (const auto& p : named) params.push_back(p.tensor);
  AdamState adam = AdamState::for_params(params);
  const auto state = m.state();

  TrainingHistory history;
  std::vector<Tensor> best;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<std::size_t> labels;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t last = std::min(first + cfg.batch_size, order.size());
      const Tensor batch = make_batch(data, order, first, last, labels);
      for (auto& p : params) p.zero_grad();
      Tensor loss = cross_entropy(m.forward(batch, Mode::kTrain), labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss " + std::to_string(value) + " at epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(step + 1) +
                            "; aborting");
      }
      loss.backward();
      std::vector<std::span<const double>> grads;
      for (const auto& p : params) grads.push_back(p.grad());
      adam_step(params, grads, adam, cfg, ++step);
      loss_sum += value * static_cast<double>(last - first);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    if (cfg.recalibrate_bn) recalibrate_batchnorm(m, data, cfg.batch_size);
    rec.eval_accuracy = evaluate(m, held_out, cfg.batch_size).accuracy;
    history.epochs.push_back(rec);
    if (history.best_epoch == 0 || rec.eval_accuracy > history.best_accuracy) {
      history.best_epoch = epoch;
      history.best_accuracy = rec.eval_accuracy;
      if (cfg.restore_best) best = snapshot(state);
    }
    if (on_epoch) on_epoch(rec);
    if (cfg.target_accuracy > 0.0 && rec.eval_accuracy >= cfg.target_accuracy) {
      history.reached_target = true;
      break;
    }
  }
  for (auto& p : params) p.zero_grad();
  if (cfg.restore_best && !best.empty()) restore(state, best);
  return history;
}

}  // namespace cs3d
