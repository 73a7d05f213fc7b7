// SPDX-License-Identifier: Apache-2.0
//
// RMSProp training on row-wise sequences, per-epoch evaluation, and the
// metrics CSV files written for each run and each learning-rate sweep.

#ifndef SLSTM_TRAINER_HPP
#define SLSTM_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "slstm/cells.hpp"
#include "slstm/data.hpp"

namespace slstm {

enum class Precision { Single, Double };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);

struct RmsPropConfig {
  double eta = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-7;
};

/// Mean-square caches, one per parameter tensor.
template <typename T>
struct OptimizerState {
  RmsPropConfig hp;
  GradBundle<T> cache;
};

template <typename T>
OptimizerState<T> make_optimizer(const Network<T>& net, const RmsPropConfig& hp);

/// cache <- rho cache + (1 - rho) g^2;  param <- param - eta g / (sqrt(cache) + eps).
/// Returns false, leaving params and caches untouched, when the gradients or
/// the resulting update are not finite.
template <typename T>
bool rmsprop_step(Network<T>& params, const GradBundle<T>& grads, OptimizerState<T>& state);

/// Defaults follow the reference network setup: hidden 100, batch 32,
/// 100 epochs, eta 1e-3.
struct ExperimentConfig {
  VariantKind variant = VariantKind::LSTM11;
  Activation activation = Activation::Tanh;
  double eta = 1e-3;
  int epochs = 100;
  std::size_t batch_size = 32;
  Index hidden = 100;
  std::uint64_t seed = 1;
  Precision precision = Precision::Single;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::filesystem::path out;
  double rho = 0.9;
  double epsilon = 1e-7;
  /// Global-norm gradient clipping; 0 disables it.
  double clip = 0.0;

  /// Throws std::invalid_argument on a non-positive eta, epochs, batch size
  /// or hidden size.
  void validate() const;
  GateActivations activations() const { return {Activation::Sigmoid, activation}; }
  RmsPropConfig optimizer() const { return {eta, rho, epsilon}; }
};

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double train_loss = 0.0;
  double wall_seconds = 0.0;
  bool diverged = false;
};

struct EvalResult {
  double accuracy = 0.0;
  /// Samples whose logits were not finite; they count as wrong.
  std::size_t non_finite = 0;
};

/// Fraction of samples whose argmax logit (lowest index on ties) equals the
/// label.
template <typename T>
EvalResult evaluate(const Network<T>& net, GateActivations acts, const Dataset<T>& data,
                    std::size_t eval_batch = 500);

/// Index of the largest entry of each row, lowest index on ties.
template <typename T>
std::vector<int> argmax_rows(const Matrix<T>& logits);

template <typename T>
struct TrainResult {
  std::vector<EpochRecord> records;
  Network<T> params;
  bool diverged = false;
  std::string divergence_note;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffle, batch, forward, cross-entropy, BPTT and RMSProp for every epoch,
/// then accuracy on both sets. Once a non-finite loss, gradient or state
/// shows up, updates stop: the offending epoch and all later ones are
/// recorded with diverged set, evaluated on the last finite parameters.
template <typename T>
TrainResult<T> train(const ExperimentConfig& config, const Dataset<T>& train_set,
                     const Dataset<T>& test_set, const EpochCallback& on_epoch = {});

/// Applies the train/test limits of `config` (seeded subsets).
template <typename T>
Mnist<T> apply_limits(const ExperimentConfig& config, const Mnist<T>& full);

inline constexpr std::string_view kMetricsHeader =
    "epoch,train_acc,test_acc,train_loss,wall_seconds,diverged";
inline constexpr std::string_view kSummaryHeader = "eta,best_train_acc,best_test_acc";

std::string metrics_csv(std::span<const EpochRecord> records);
void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochRecord> records);

struct SweepRow {
  double eta = 0.0;
  /// Max over epochs, independently for each column.
  double best_train_acc = 0.0;
  double best_test_acc = 0.0;
  bool diverged = false;
};

SweepRow summarize(double eta, std::span<const EpochRecord> records);
std::string summary_csv(std::span<const SweepRow> rows);
/// "%g" rendering used in file names and the summary.
std::string format_eta(double eta);

/// One train() per eta. With a non-empty base.out, each run writes
/// <out>/eta_<eta>/metrics.csv and the sweep writes <out>/summary.csv.
template <typename T>
std::vector<SweepRow> sweep(const ExperimentConfig& base, std::span<const double> etas,
                            const Dataset<T>& train_set, const Dataset<T>& test_set,
                            const std::function<void(double, const EpochRecord&)>& on_epoch = {});

}  // namespace slstm

#endif  // SLSTM_TRAINER_HPP
