// SPDX-License-Identifier: Apache-2.0

#include "slstm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "slstm/grad.hpp"
#include "slstm/rng.hpp"

namespace slstm {

namespace {

std::string fmt_fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

template <typename T>
double squared_norm(const GradBundle<T>& g) {
  double s = 0.0;
  g.for_each_tensor([&](const TensorSpec&, const Matrix<T>& t) {
    s += t.template cast<double>().squaredNorm();
  });
  return s;
}

template <typename T>
bool grads_finite(const GradBundle<T>& g) {
  bool ok = true;
  g.for_each_tensor([&](const TensorSpec&, const Matrix<T>& t) { ok = ok && all_finite(t); });
  return ok;
}

}  // namespace

std::string_view to_string(Precision p) {
  return p == Precision::Single ? "single" : "double";
}

Precision parse_precision(std::string_view name) {
  if (name == "single") return Precision::Single;
  if (name == "double") return Precision::Double;
  throw std::invalid_argument("unknown precision '" + std::string(name) +
                              "' (expected single or double)");
}

void ExperimentConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("eta must be > 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (hidden < 1) throw std::invalid_argument("hidden size must be >= 1");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must be in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (clip < 0.0) throw std::invalid_argument("clip must be >= 0");
}

template <typename T>
OptimizerState<T> make_optimizer(const Network<T>& net, const RmsPropConfig& hp) {
  return {hp, net.zeros_like()};
}

template <typename T>
bool rmsprop_step(Network<T>& params, const GradBundle<T>& grads, OptimizerState<T>& state) {
  if (!grads_finite(grads)) return false;
  const T rho = static_cast<T>(state.hp.rho);
  const T eta = static_cast<T>(state.hp.eta);
  const T eps = static_cast<T>(state.hp.epsilon);

  std::vector<const Matrix<T>*> g;
  grads.for_each_tensor([&](const TensorSpec&, const Matrix<T>& t) { g.push_back(&t); });
  std::vector<Matrix<T>*> cache;
  state.cache.for_each_tensor([&](const TensorSpec&, Matrix<T>& t) { cache.push_back(&t); });
  std::vector<Matrix<T>*> p;
  params.for_each_tensor([&](const TensorSpec&, Matrix<T>& t) { p.push_back(&t); });
  if (g.size() != p.size() || cache.size() != p.size()) {
    throw std::invalid_argument("rmsprop_step: bundle layouts differ");
  }

  // Stage everything first so a non-finite update leaves the state untouched.
  std::vector<Matrix<T>> new_cache(p.size());
  std::vector<Matrix<T>> step(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k]->rows() != p[k]->rows() || g[k]->cols() != p[k]->cols()) {
      throw ShapeError("rmsprop_step", g[k]->rows(), g[k]->cols(), p[k]->rows(), p[k]->cols());
    }
    new_cache[k] = (rho * cache[k]->array() + (T(1) - rho) * g[k]->array().square()).matrix();
    step[k] = (eta * g[k]->array() / (new_cache[k].array().sqrt() + eps)).matrix();
    if (!all_finite(step[k])) return false;
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    *cache[k] = std::move(new_cache[k]);
    *p[k] -= step[k];
  }
  return true;
}

template <typename T>
std::vector<int> argmax_rows(const Matrix<T>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k) {
      if (logits(r, k) > logits(r, best)) best = k;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
EvalResult evaluate(const Network<T>& net, GateActivations acts, const Dataset<T>& data,
                    std::size_t eval_batch) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult result;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += eval_batch) {
    const std::size_t end = std::min(data.size(), start + eval_batch);
    idx.resize(end - start);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = start + k;
    const auto batch = gather_batch(data, idx);
    const auto out = sequence_forward<T>(net, acts, batch.steps, false);
    const auto pred = argmax_rows(out.logits);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (!all_finite(out.logits.row(static_cast<Index>(k)))) {
        ++result.non_finite;
      } else if (pred[k] == batch.targets[k]) {
        ++correct;
      }
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return result;
}

template <typename T>
TrainResult<T> train(const ExperimentConfig& config, const Dataset<T>& train_set,
                     const Dataset<T>& test_set, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0 || test_set.size() == 0) {
    throw std::invalid_argument("train: empty dataset");
  }
  const Dims dims{static_cast<Index>(train_set.inputs.features), config.hidden, kMnistClasses};
  const auto acts = config.activations();

  TrainResult<T> result{{}, init_network<T>(config.variant, dims, config.seed), false, {}};
  auto& net = result.params;
  auto opt = make_optimizer(net, config.optimizer());
  auto grads = net.zeros_like();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (result.diverged) {
      EpochRecord rec = result.records.back();
      rec.epoch = epoch;
      result.records.push_back(rec);
      if (on_epoch) on_epoch(rec);
      continue;
    }

    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto t0 = std::chrono::steady_clock::now();
    BatchStream<T> stream(train_set, config.batch_size, config.seed,
                          static_cast<std::uint64_t>(epoch));
    while (auto batch = stream.next()) {
      try {
        const auto out = sequence_forward<T>(net, acts, batch->steps, true);
        const auto loss = softmax_xent<T>(out.logits, batch->targets);
        if (!std::isfinite(loss.loss)) {
          throw DivergenceError(static_cast<Index>(batch->steps.size()), epoch);
        }
        grads.cell.set_zero();
        grads.head.set_zero();
        bptt_accumulate(net, acts, out.tape, loss.dlogits, grads);
        if (config.clip > 0.0) {
          const double norm = std::sqrt(squared_norm(grads));
          if (std::isfinite(norm) && norm > config.clip) {
            const T scale = static_cast<T>(config.clip / norm);
            grads.for_each_tensor([&](const TensorSpec&, Matrix<T>& t) { t *= scale; });
          }
        }
        if (!rmsprop_step(net, grads, opt)) {
          result.diverged = true;
          result.divergence_note = "non-finite gradient update in epoch " + std::to_string(epoch);
          break;
        }
        loss_sum += loss.loss * static_cast<double>(batch->size());
        seen += batch->size();
      } catch (const DivergenceError& e) {
        result.diverged = true;
        result.divergence_note = DivergenceError(e.step(), epoch).what();
        break;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.wall_seconds = std::max(std::chrono::duration<double>(t1 - t0).count(),
                                std::numeric_limits<double>::min());
    rec.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen)
                              : std::numeric_limits<double>::quiet_NaN();
    rec.train_acc = evaluate(net, acts, train_set).accuracy;
    rec.test_acc = evaluate(net, acts, test_set).accuracy;
    rec.diverged = result.diverged;
    result.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

template <typename T>
Mnist<T> apply_limits(const ExperimentConfig& config, const Mnist<T>& full) {
  return {take_subset(full.train, config.train_limit, config.seed),
          take_subset(full.test, config.test_limit, derive_seed(config.seed, 1))};
}

std::string metrics_csv(std::span<const EpochRecord> records) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + ',' + fmt_fixed(r.train_acc, 6) + ',' +
           fmt_fixed(r.test_acc, 6) + ',' + fmt_fixed(r.train_loss, 6) + ',' +
           fmt_fixed(r.wall_seconds, 3) + ',' + (r.diverged ? "1" : "0") + '\n';
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochRecord> records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << metrics_csv(records);
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string format_eta(double eta) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", eta);
  return buf;
}

SweepRow summarize(double eta, std::span<const EpochRecord> records) {
  SweepRow row{eta, 0.0, 0.0, false};
  for (const auto& r : records) {
    row.best_train_acc = std::max(row.best_train_acc, r.train_acc);
    row.best_test_acc = std::max(row.best_test_acc, r.test_acc);
    row.diverged = row.diverged || r.diverged;
  }
  return row;
}

std::string summary_csv(std::span<const SweepRow> rows) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += format_eta(r.eta) + ',' + fmt_fixed(r.best_train_acc, 6) + ',' +
           fmt_fixed(r.best_test_acc, 6) + '\n';
  }
  return out;
}

template <typename T>
std::vector<SweepRow> sweep(const ExperimentConfig& base, std::span<const double> etas,
                            const Dataset<T>& train_set, const Dataset<T>& test_set,
                            const std::function<void(double, const EpochRecord&)>& on_epoch) {
  if (etas.empty()) throw std::invalid_argument("sweep: empty eta list");
  std::vector<SweepRow> rows;
  for (const double eta : etas) {
    ExperimentConfig cfg = base;
    cfg.eta = eta;
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochRecord& r) { on_epoch(eta, r); };
    const auto run = train<T>(cfg, train_set, test_set, cb);
    if (!base.out.empty()) {
      const auto dir = base.out / ("eta_" + format_eta(eta));
      std::filesystem::create_directories(dir);
      write_metrics_csv(dir / "metrics.csv", run.records);
    }
    rows.push_back(summarize(eta, run.records));
  }
  if (!base.out.empty()) {
    std::filesystem::create_directories(base.out);
    std::ofstream os(base.out / "summary.csv", std::ios::binary | std::ios::trunc);
    os << summary_csv(rows);
    if (!os) throw std::runtime_error("cannot write " + (base.out / "summary.csv").string());
  }
  return rows;
}

#define SLSTM_INSTANTIATE_TRAINER(T)                                                   \
  template OptimizerState<T> make_optimizer(const Network<T>&, const RmsPropConfig&);  \
  template bool rmsprop_step(Network<T>&, const GradBundle<T>&, OptimizerState<T>&);   \
  template std::vector<int> argmax_rows(const Matrix<T>&);                             \
  template EvalResult evaluate(const Network<T>&, GateActivations, const Dataset<T>&,  \
                               std::size_t);                                           \
  template TrainResult<T> train(const ExperimentConfig&, const Dataset<T>&,            \
                                const Dataset<T>&, const EpochCallback&);              \
  template Mnist<T> apply_limits(const ExperimentConfig&, const Mnist<T>&);            \
  template std::vector<SweepRow> sweep(const ExperimentConfig&, std::span<const double>, \
                                       const Dataset<T>&, const Dataset<T>&,           \
                                       const std::function<void(double, const EpochRecord&)>&);

SLSTM_INSTANTIATE_TRAINER(float)
SLSTM_INSTANTIATE_TRAINER(double)

#undef SLSTM_INSTANTIATE_TRAINER

}  // namespace slstm
