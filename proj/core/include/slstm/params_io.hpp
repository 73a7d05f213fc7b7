// SPDX-License-Identifier: Apache-2.0
//
// Binary parameter container (byte layout in docs/param_format.md) and its
// text manifest.

#ifndef SLSTM_PARAMS_IO_HPP
#define SLSTM_PARAMS_IO_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slstm/cells.hpp"

namespace slstm {

inline constexpr char kParamMagic[8] = {'S', 'L', 'S', 'T', 'M', 'P', 'R', 'M'};
inline constexpr std::uint32_t kParamFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamHeader {
  VariantKind variant = VariantKind::BaseLSTM;
  /// Bytes per scalar: 4 (single) or 8 (double).
  std::uint32_t scalar_bytes = 4;
  Dims dims{};
  Lstm6Gates gates{};
  std::uint32_t tensor_count = 0;
};

ParamHeader read_param_header(std::span<const std::uint8_t> bytes);

template <typename T>
std::vector<std::uint8_t> encode_params(const Network<T>& net);

/// Throws FormatError on a malformed buffer or when the stored precision is
/// not T.
template <typename T>
Network<T> decode_params(std::span<const std::uint8_t> bytes);

template <typename T>
std::string param_manifest(const Network<T>& net);

template <typename T>
void save_params(const Network<T>& net, const std::filesystem::path& bin_path,
                 const std::filesystem::path& manifest_path);

template <typename T>
Network<T> load_params(const std::filesystem::path& bin_path);

}  // namespace slstm

#endif  // SLSTM_PARAMS_IO_HPP
