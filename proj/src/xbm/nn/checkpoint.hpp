#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xbm/ad/tape.hpp"

namespace xbm::nn {

/// Named parameter trees in one file ("XBMC"): magic, version, config echo,
/// then blocks of (length-prefixed name, rank, dims, little-endian f64 data).
/// Tree membership is encoded as a name prefix such as "teacher/".
struct Checkpoint {
  std::string config_text;
  std::map<std::string, ad::Tensor> tensors;

  void add(const std::string& prefix, std::span<ad::Parameter* const> params);
  /// Copies values into `params`; throws a data error if a name is missing,
  /// a shape differs, or the tree under `prefix` has extra entries.
  void load(const std::string& prefix, std::span<ad::Parameter* const> params) const;
  bool has_tree(const std::string& prefix) const;

  std::vector<unsigned char> serialize() const;
  /// SHA-256 of the serialized bytes.
  std::string checksum() const;
  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);
};

/// Sum over matching parameters of ||a - b||^2; throws on tree mismatch.
double squared_distance(std::span<ad::Parameter* const> a, std::span<ad::Parameter* const> b);

}  // namespace xbm::nn
