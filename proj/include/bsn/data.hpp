#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bsn/loss.hpp"
#include "bsn/tensor.hpp"

namespace bsn {

struct Dataset {
  std::string name;
  Shape input_shape;
  int num_classes = 0;
  LossKind loss = LossKind::CrossEntropy;
  std::vector<TensorD> inputs;
  std::vector<TensorD> targets;  // one-hot
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  void add(TensorD x, int label);
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Two interleaved half circles in 2-D, with Gaussian noise.
Dataset make_moons(int count, double noise, std::uint64_t seed);

std::filesystem::path default_digits_path();

/// 8x8 handwritten digits (10 classes), pixels scaled to [0, 1]. flat gives
/// inputs of shape {64} instead of {1, 8, 8}. Binary layout: "BSND", u32
/// version 1, u32 count, u32 dim, then per record one label byte and dim
/// pixel bytes in 0..16.
Dataset load_digits(const std::filesystem::path& path, bool flat);

/// Deterministic shuffled split; the second part gets round(fraction * size).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double second_fraction, std::uint64_t seed);

}  // namespace bsn
