// SPDX-License-Identifier: Apache-2.0

#include "slstm/params_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace slstm {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  out.insert(out.end(), raw.begin(), raw.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::array<std::uint8_t, sizeof(U)> raw{};
    std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), sizeof(U), raw.begin());
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw.begin(), raw.end());
    }
    pos_ += sizeof(U);
    return std::bit_cast<U>(raw);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("parameter file truncated at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t variant_tag(VariantKind kind) { return static_cast<std::uint32_t>(kind); }

VariantKind variant_from_tag(std::uint32_t tag) {
  if (tag > 3) throw FormatError("unknown variant tag " + std::to_string(tag));
  return static_cast<VariantKind>(tag);
}

std::string shape_string(const TensorSpec& s) {
  std::ostringstream os;
  if (s.is_vector) {
    os << "[" << s.cols << "]";
  } else {
    os << "[" << s.rows << ", " << s.cols << "]";
  }
  return os.str();
}

}  // namespace

ParamHeader read_param_header(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get_string(8) != std::string(kParamMagic, 8)) {
    throw FormatError("not a parameter file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kParamFormatVersion) {
    throw FormatError("unsupported parameter format version " + std::to_string(version));
  }
  ParamHeader h;
  h.variant = variant_from_tag(r.get<std::uint32_t>());
  h.scalar_bytes = r.get<std::uint32_t>();
  if (h.scalar_bytes != 4 && h.scalar_bytes != 8) {
    throw FormatError("unsupported scalar width " + std::to_string(h.scalar_bytes));
  }
  h.dims.input = r.get<std::uint32_t>();
  h.dims.hidden = r.get<std::uint32_t>();
  h.dims.out = r.get<std::uint32_t>();
  h.gates.input = r.get<double>();
  h.gates.forget = r.get<double>();
  h.gates.output = r.get<double>();
  h.tensor_count = r.get<std::uint32_t>();
  return h;
}

template <typename T>
std::vector<std::uint8_t> encode_params(const Network<T>& net) {
  std::vector<std::uint8_t> out(std::begin(kParamMagic), std::end(kParamMagic));
  const Dims d = net.dims();
  put_le<std::uint32_t>(out, kParamFormatVersion);
  put_le<std::uint32_t>(out, variant_tag(net.variant()));
  put_le<std::uint32_t>(out, sizeof(T));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.input));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.hidden));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.out));
  put_le<double>(out, net.cell.gates().input);
  put_le<double>(out, net.cell.gates().forget);
  put_le<double>(out, net.cell.gates().output);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.cell.size() + net.head.size()));
  net.for_each_tensor([&](const TensorSpec& spec, const Matrix<T>& t) {
    const auto name = spec.name();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    if (spec.is_vector) {
      put_le<std::uint32_t>(out, 1);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.cols));
    } else {
      put_le<std::uint32_t>(out, 2);
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.rows));
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.cols));
    }
    for (Index k = 0; k < t.size(); ++k) put_le<T>(out, t.data()[k]);
  });
  return out;
}

template <typename T>
Network<T> decode_params(std::span<const std::uint8_t> bytes) {
  const ParamHeader h = read_param_header(bytes);
  if (h.scalar_bytes != sizeof(T)) {
    throw FormatError("parameter file stores " + std::to_string(h.scalar_bytes * 8) +
                      "-bit scalars, expected " + std::to_string(sizeof(T) * 8));
  }
  Network<T> net{CellParams<T>(h.variant, h.dims.input, h.dims.hidden, h.gates),
                 OutputHead<T>(h.dims.hidden, h.dims.out)};
  if (h.tensor_count != net.cell.size() + net.head.size()) {
    throw FormatError("tensor count " + std::to_string(h.tensor_count) +
                      " does not match the variant layout");
  }
  Reader r(bytes);
  r.get_string(8 + 6 * 4 + 3 * 8 + 4);
  net.for_each_tensor([&](const TensorSpec& spec, Matrix<T>& t) {
    const auto name = r.get_string(r.get<std::uint32_t>());
    if (name != spec.name()) {
      throw FormatError("expected tensor " + std::string(spec.name()) + ", found " + name);
    }
    const auto rank = r.get<std::uint32_t>();
    const Index rows = rank == 2 ? static_cast<Index>(r.get<std::uint32_t>()) : 1;
    const Index cols = static_cast<Index>(r.get<std::uint32_t>());
    if ((rank == 1) != spec.is_vector || rank > 2 || rows != spec.rows || cols != spec.cols) {
      throw FormatError("tensor " + name + " has an unexpected shape");
    }
    for (Index k = 0; k < t.size(); ++k) t.data()[k] = r.get<T>();
  });
  if (!r.done()) {
    throw FormatError("trailing bytes after the last tensor at byte " + std::to_string(r.pos()));
  }
  return net;
}

template <typename T>
std::string param_manifest(const Network<T>& net) {
  const Dims d = net.dims();
  std::ostringstream os;
  os << "format slstm-params " << kParamFormatVersion << "\n"
     << "variant " << to_string(net.variant()) << "\n"
     << "precision " << (sizeof(T) == 4 ? "single" : "double") << "\n"
     << "input " << d.input << "\nhidden " << d.hidden << "\nout " << d.out << "\n";
  if (net.variant() == VariantKind::LSTM6) {
    const auto& g = net.cell.gates();
    os << "gates input=" << g.input << " forget=" << g.forget << " output=" << g.output << "\n";
  }
  os << "tensors " << net.cell.size() + net.head.size() << "\n";
  net.for_each_tensor([&](const TensorSpec& spec, const Matrix<T>&) {
    os << spec.name() << " " << shape_string(spec) << " " << spec.size() << "\n";
  });
  os << "total_scalars " << net.scalar_count() << "\n";
  return os.str();
}

template <typename T>
void save_params(const Network<T>& net, const std::filesystem::path& bin_path,
                 const std::filesystem::path& manifest_path) {
  const auto bytes = encode_params(net);
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!bin) throw FormatError("cannot write " + bin_path.string());
  std::ofstream man(manifest_path, std::ios::trunc);
  man << param_manifest(net);
  if (!man) throw FormatError("cannot write " + manifest_path.string());
}

template <typename T>
Network<T> load_params(const std::filesystem::path& bin_path) {
  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + bin_path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                        std::istreambuf_iterator<char>());
  return decode_params<T>(bytes);
}

#define SLSTM_INSTANTIATE_IO(T)                                                   \
  template std::vector<std::uint8_t> encode_params(const Network<T>&);            \
  template Network<T> decode_params<T>(std::span<const std::uint8_t>);            \
  template std::string param_manifest(const Network<T>&);                         \
  template void save_params(const Network<T>&, const std::filesystem::path&,      \
                            const std::filesystem::path&);                        \
  template Network<T> load_params<T>(const std::filesystem::path&);

SLSTM_INSTANTIATE_IO(float)
SLSTM_INSTANTIATE_IO(double)

#undef SLSTM_INSTANTIATE_IO

}  // namespace slstm
