// SPDX-License-Identifier: Apache-2.0
//
// MNIST ingestion. IDX files are read as distributed (big-endian header),
// optionally gzip-compressed. Each 28x28 image becomes a 28-step sequence of
// 28-pixel rows scaled to [0, 1].

#ifndef SLSTM_DATA_HPP
#define SLSTM_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slstm/tensor.hpp"

namespace slstm {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kMnistSide = 28;
inline constexpr int kMnistClasses = 10;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t offset, const std::string& what);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageSet {
  std::size_t count = 0;
  std::size_t rows = kMnistSide;
  std::size_t cols = kMnistSide;
  std::vector<std::uint8_t> pixels;
};

struct LabelSet {
  std::vector<std::uint8_t> labels;
  std::size_t count() const { return labels.size(); }
};

ImageSet parse_idx_images(std::span<const std::uint8_t> bytes,
                          const std::string& source = "<memory>");
LabelSet parse_idx_labels(std::span<const std::uint8_t> bytes,
                          const std::string& source = "<memory>");

/// Plain or gzip-compressed files are both accepted.
ImageSet load_idx_images(const std::filesystem::path& path);
LabelSet load_idx_labels(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_idx_images(const ImageSet& images);
std::vector<std::uint8_t> encode_idx_labels(const LabelSet& labels);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Row-wise sequences stored contiguously: sample-major, then timestep, then
/// feature.
template <typename T>
struct SequenceSet {
  std::size_t count = 0;
  std::size_t steps = kMnistSide;
  std::size_t features = kMnistSide;
  std::vector<T> values;

  std::span<const T> sample(std::size_t i) const {
    return std::span<const T>(values).subspan(i * steps * features, steps * features);
  }
  /// One 1 x features matrix per timestep.
  std::vector<Matrix<T>> sequence(std::size_t i) const;
};

/// Pixel / 255, row r of an image is timestep r.
template <typename T>
SequenceSet<T> to_sequences(const ImageSet& images);

template <typename T>
struct Dataset {
  SequenceSet<T> inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Validates labels (< 10) and the image/label count pairing.
template <typename T>
Dataset<T> make_dataset(const ImageSet& images, const LabelSet& labels);

/// First `limit` samples after a seeded shuffle; the whole set when limit is
/// zero or not smaller than the set.
template <typename T>
Dataset<T> take_subset(const Dataset<T>& data, std::size_t limit, std::uint64_t seed);

template <typename T>
struct SequenceBatch {
  /// steps[t] is batch x features.
  std::vector<Matrix<T>> steps;
  std::vector<int> targets;
  std::vector<std::size_t> indices;
  std::size_t size() const { return targets.size(); }
};

/// Shuffled index batches for one epoch, keyed by (seed, epoch). The last
/// batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed,
                                                    std::uint64_t epoch);

template <typename T>
SequenceBatch<T> gather_batch(const Dataset<T>& data, std::span<const std::size_t> indices);

/// Iterates the batches of one epoch.
template <typename T>
class BatchStream {
 public:
  BatchStream(const Dataset<T>& data, std::size_t batch_size, std::uint64_t seed,
              std::uint64_t epoch)
      : data_(&data), plan_(epoch_batches(data.size(), batch_size, seed, epoch)) {}

  std::size_t batch_count() const { return plan_.size(); }
  std::optional<SequenceBatch<T>> next() {
    if (pos_ >= plan_.size()) return std::nullopt;
    return gather_batch(*data_, plan_[pos_++]);
  }

 private:
  const Dataset<T>* data_;
  std::vector<std::vector<std::size_t>> plan_;
  std::size_t pos_ = 0;
};

struct MnistFiles {
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
};

/// Looks for the standard file names (optionally with .gz) in `dir`; throws
/// DataError naming every expected file when any is missing.
MnistFiles locate_mnist(const std::filesystem::path& dir);

template <typename T>
struct Mnist {
  Dataset<T> train;
  Dataset<T> test;
};

template <typename T>
Mnist<T> load_mnist(const std::filesystem::path& dir);

}  // namespace slstm

#endif  // SLSTM_DATA_HPP
