#include "bsn/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include "bsn/rng.hpp"

namespace bsn {

void Dataset::add(TensorD x, int label) {
  if (x.shape != input_shape) throw Error(Errc::ShapeMismatch, "example shape " + shape_string(x.shape) + " vs " + shape_string(input_shape));
  if (label < 0 || label >= num_classes) throw Error(Errc::InvalidConfig, "label out of range");
  TensorD t = TensorD::zeros({num_classes});
  t.data[label] = 1.0;
  inputs.push_back(std::move(x));
  targets.push_back(std::move(t));
  labels.push_back(label);
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out{name, input_shape, num_classes, loss, {}, {}, {}};
  for (std::size_t i : indices) {
    out.inputs.push_back(inputs.at(i));
    out.targets.push_back(targets.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

Dataset make_moons(int count, double noise, std::uint64_t seed) {
  if (count < 1) throw Error(Errc::InvalidConfig, "moons count must be positive");
  Dataset d{"moons", {2}, 2, LossKind::CrossEntropy, {}, {}, {}};
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    const double t = M_PI * rng.uniform();
    TensorD x = TensorD::zeros({2});
    if (label == 0) {
      x.data << std::cos(t), std::sin(t);
    } else {
      x.data << 1.0 - std::cos(t), 0.5 - std::sin(t);
    }
    x.data[0] += noise * rng.normal();
    x.data[1] += noise * rng.normal();
    d.add(std::move(x), label);
  }
  return d;
}

std::filesystem::path default_digits_path() { return std::filesystem::path(BSN_DATA_DIR) / "digits8x8.bin"; }

Dataset load_digits(const std::filesystem::path& path, bool flat) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || std::string(magic, 4) != "BSND") throw Error(Errc::ParseError, path.string() + ": not a digits file");
  const auto [version, count, dim] = std::tuple(header[0], header[1], header[2]);
  if (version != 1 || dim != 64) throw Error(Errc::ParseError, path.string() + ": unsupported digits layout");
  Dataset d{"digits", flat ? Shape{64} : Shape{1, 8, 8}, 10, LossKind::CrossEntropy, {}, {}, {}};
  std::vector<unsigned char> record(1 + dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!in) throw Error(Errc::ParseError, path.string() + ": truncated");
    TensorD x = TensorD::zeros(d.input_shape);
    for (std::uint32_t p = 0; p < dim; ++p) x.data[p] = record[1 + p] / 16.0;
    d.add(std::move(x), record[0]);
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double second_fraction, std::uint64_t seed) {
  if (second_fraction < 0.0 || second_fraction > 1.0) throw Error(Errc::InvalidConfig, "split fraction must be in [0, 1]");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const auto second = static_cast<std::size_t>(std::lround(second_fraction * static_cast<double>(data.size())));
  const std::vector<std::size_t> a(order.begin(), order.end() - static_cast<std::ptrdiff_t>(second));
  const std::vector<std::size_t> b(order.end() - static_cast<std::ptrdiff_t>(second), order.end());
  return {data.subset(a), data.subset(b)};
}

}  // namespace bsn
