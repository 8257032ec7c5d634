#pragma once

// Binary tensor container:
//   magic "G2SQG" | u32 format version | u32 tensor count |
//   per tensor { u32 name length | UTF-8 name | u32 rank | u32 dims[rank] |
//                f32 data[prod(dims)] (row-major) } |
//   u32 CRC32 of every preceding byte
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "g2sqg/params.hpp"

namespace g2s {

inline constexpr char kContainerMagic[5] = {'G', '2', 'S', 'Q', 'G'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;  // row-major

  static TensorRecord from_matrix(std::string name, const Matrix<float>& m);
  /// Rank 0/1 tensors become column vectors.
  Matrix<float> to_matrix() const;
};

void write_container(std::ostream& out, std::span<const TensorRecord> tensors);
/// Throws IntegrityError on bad magic, truncation or CRC mismatch and
/// FormatError on an unsupported version.
std::vector<TensorRecord> read_container(std::istream& in);

void save_container(const std::filesystem::path& path, std::span<const TensorRecord> tensors);
std::vector<TensorRecord> load_container(const std::filesystem::path& path);

struct OptimizerState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  ParameterStore<float> first_moment;
  ParameterStore<float> second_moment;
  std::uint64_t step = 0;
};

/// Trainable weights, optimizer state and the fixed word vectors that
/// together reproduce a model.
struct Checkpoint {
  ParameterStore<float> params;
  OptimizerState optimizer;
  Matrix<float> glove;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// `expected_hash`, when given, is compared against the stored hash; a
/// mismatch writes a warning to `warnings` (if non-null) but still loads.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {},
                           std::vector<std::string>* warnings = nullptr);

}  // namespace g2s
