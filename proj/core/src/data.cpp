// SPDX-License-Identifier: Apache-2.0

#include "slstm/data.hpp"

#include <zlib.h>

#include <array>
#include <fstream>
#include <sstream>

#include "slstm/rng.hpp"

namespace slstm {

namespace {

std::string parse_message(const std::string& source, std::size_t offset,
                          const std::string& what) {
  std::ostringstream os;
  os << source << ": " << what << " (at byte offset " << offset << ")";
  return os.str();
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                        const std::string& source) {
  if (bytes.size() < offset + 4) {
    throw ParseError(source, bytes.size(), "truncated header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

// gzread passes uncompressed files through unchanged.
std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw DataError("cannot open " + path.string());
  }
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int errnum = 0;
      const std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw DataError("read error in " + path.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

std::filesystem::path find_with_gz(const std::filesystem::path& dir,
                                   const std::string& name) {
  const auto plain = dir / name;
  if (std::filesystem::exists(plain)) return plain;
  const auto gz = dir / (name + ".gz");
  if (std::filesystem::exists(gz)) return gz;
  return {};
}

}  // namespace

ParseError::ParseError(const std::string& source, std::size_t offset,
                       const std::string& what)
    : std::runtime_error(parse_message(source, offset, what)), offset_(offset) {}

ImageSet parse_idx_images(std::span<const std::uint8_t> bytes,
                          const std::string& source) {
  const std::uint32_t magic = read_be32(bytes, 0, source);
  if (magic != kIdxImageMagic) {
    throw ParseError(source, 0,
                     "expected image magic " + hex32(kIdxImageMagic) + ", found " +
                         hex32(magic));
  }
  ImageSet images;
  images.count = read_be32(bytes, 4, source);
  images.rows = read_be32(bytes, 8, source);
  images.cols = read_be32(bytes, 12, source);
  if (images.rows != kMnistSide) {
    throw ParseError(source, 8, "expected 28 rows, found " + std::to_string(images.rows));
  }
  if (images.cols != kMnistSide) {
    throw ParseError(source, 12, "expected 28 cols, found " + std::to_string(images.cols));
  }
  const std::size_t payload = images.count * images.rows * images.cols;
  if (bytes.size() - 16 < payload) {
    throw ParseError(source, bytes.size(),
                     "truncated pixel data: expected " + std::to_string(payload) +
                         " bytes after the header");
  }
  images.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return images;
}

LabelSet parse_idx_labels(std::span<const std::uint8_t> bytes, const std::string& source) {
  const std::uint32_t magic = read_be32(bytes, 0, source);
  if (magic != kIdxLabelMagic) {
    throw ParseError(source, 0,
                     "expected label magic " + hex32(kIdxLabelMagic) + ", found " +
                         hex32(magic));
  }
  const std::size_t count = read_be32(bytes, 4, source);
  if (bytes.size() - 8 < count) {
    throw ParseError(source, bytes.size(),
                     "truncated label data: expected " + std::to_string(count) + " labels");
  }
  LabelSet labels;
  labels.labels.assign(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  for (std::size_t i = 0; i < count; ++i) {
    if (labels.labels[i] >= kMnistClasses) {
      throw ParseError(source, 8 + i,
                       "label " + std::to_string(labels.labels[i]) + " is not in [0, 9]");
    }
  }
  return labels;
}

ImageSet load_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return parse_idx_images(bytes, path.string());
}

LabelSet load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return parse_idx_labels(bytes, path.string());
}

std::vector<std::uint8_t> encode_idx_images(const ImageSet& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const LabelSet& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.labels.size());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.labels.size()));
  out.insert(out.end(), labels.labels.begin(), labels.labels.end());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for " + path.string());
}

template <typename T>
std::vector<Matrix<T>> SequenceSet<T>::sequence(std::size_t i) const {
  const auto s = sample(i);
  std::vector<Matrix<T>> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix<T> row(1, static_cast<Index>(features));
    std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(t * features), features, row.data());
    out.push_back(std::move(row));
  }
  return out;
}

template <typename T>
SequenceSet<T> to_sequences(const ImageSet& images) {
  SequenceSet<T> seqs;
  seqs.count = images.count;
  seqs.steps = images.rows;
  seqs.features = images.cols;
  seqs.values.resize(images.pixels.size());
  for (std::size_t k = 0; k < images.pixels.size(); ++k) {
    seqs.values[k] = static_cast<T>(images.pixels[k]) / T(255);
  }
  return seqs;
}

template <typename T>
Dataset<T> make_dataset(const ImageSet& images, const LabelSet& labels) {
  if (images.count != labels.count()) {
    throw DataError("image/label count mismatch: " + std::to_string(images.count) +
                    " images vs " + std::to_string(labels.count()) + " labels");
  }
  Dataset<T> d;
  d.inputs = to_sequences<T>(images);
  d.labels.reserve(labels.count());
  for (auto l : labels.labels) {
    if (l >= kMnistClasses) {
      throw DataError("label " + std::to_string(l) + " is not in [0, 9]");
    }
    d.labels.push_back(l);
  }
  return d;
}

template <typename T>
Dataset<T> take_subset(const Dataset<T>& data, std::size_t limit, std::uint64_t seed) {
  if (limit == 0 || limit >= data.size()) return data;
  Rng rng(derive_seed(seed, 0x73756273));  // "subs"
  const auto order = permutation(data.size(), rng);
  const std::size_t width = data.inputs.steps * data.inputs.features;
  Dataset<T> out;
  out.inputs.count = limit;
  out.inputs.steps = data.inputs.steps;
  out.inputs.features = data.inputs.features;
  out.inputs.values.reserve(limit * width);
  out.labels.reserve(limit);
  for (std::size_t k = 0; k < limit; ++k) {
    const auto s = data.inputs.sample(order[k]);
    out.inputs.values.insert(out.inputs.values.end(), s.begin(), s.end());
    out.labels.push_back(data.labels[order[k]]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  Rng rng(derive_seed(seed, 0x65706f6300000000ULL ^ epoch));  // "epoc"
  const auto order = permutation(n, rng);
  std::vector<std::vector<std::size_t>> out;
  out.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

template <typename T>
SequenceBatch<T> gather_batch(const Dataset<T>& data, std::span<const std::size_t> indices) {
  const auto& in = data.inputs;
  const auto b = static_cast<Index>(indices.size());
  SequenceBatch<T> batch;
  batch.steps.assign(in.steps, Matrix<T>(b, static_cast<Index>(in.features)));
  batch.indices.assign(indices.begin(), indices.end());
  batch.targets.reserve(indices.size());
  for (Index r = 0; r < b; ++r) {
    const std::size_t idx = indices[static_cast<std::size_t>(r)];
    if (idx >= data.size()) throw std::out_of_range("gather_batch: sample index out of range");
    const auto s = in.sample(idx);
    for (std::size_t t = 0; t < in.steps; ++t) {
      std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(t * in.features), in.features,
                  batch.steps[t].row(r).data());
    }
    batch.targets.push_back(data.labels[idx]);
  }
  return batch;
}

MnistFiles locate_mnist(const std::filesystem::path& dir) {
  static const std::array<std::string, 4> names = {
      "train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
      "t10k-labels-idx1-ubyte"};
  std::array<std::filesystem::path, 4> found;
  std::vector<std::string> missing;
  for (std::size_t k = 0; k < names.size(); ++k) {
    found[k] = find_with_gz(dir, names[k]);
    if (found[k].empty()) missing.push_back(names[k]);
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "MNIST files missing in '" << dir.string() << "'. Expected (optionally with .gz):";
    for (const auto& n : names) os << "\n  " << (dir / n).string();
    throw DataError(os.str());
  }
  return {found[0], found[1], found[2], found[3]};
}

template <typename T>
Mnist<T> load_mnist(const std::filesystem::path& dir) {
  const auto files = locate_mnist(dir);
  return {make_dataset<T>(load_idx_images(files.train_images), load_idx_labels(files.train_labels)),
          make_dataset<T>(load_idx_images(files.test_images), load_idx_labels(files.test_labels))};
}

#define SLSTM_INSTANTIATE_DATA(T)                                                     \
  template struct SequenceSet<T>;                                                     \
  template SequenceSet<T> to_sequences<T>(const ImageSet&);                           \
  template Dataset<T> make_dataset<T>(const ImageSet&, const LabelSet&);              \
  template Dataset<T> take_subset(const Dataset<T>&, std::size_t, std::uint64_t);     \
  template SequenceBatch<T> gather_batch(const Dataset<T>&, std::span<const std::size_t>); \
  template Mnist<T> load_mnist<T>(const std::filesystem::path&);

SLSTM_INSTANTIATE_DATA(float)
SLSTM_INSTANTIATE_DATA(double)

#undef SLSTM_INSTANTIATE_DATA

}  // namespace slstm
