#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gradmatch/errors.hpp"
#include "gradmatch/rng.hpp"

namespace gradmatch {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class SplitTag { train, validation, test };

inline const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
  }
  return "?";
}

struct Dataset {
  Matrix features;          // n_samples x n_features
  std::vector<int> labels;  // class ids in [0, class_count)
  int class_count = 0;
  SplitTag split_tag = SplitTag::train;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }

  void validate() const {
    if (n() <= 0) throw std::invalid_argument("dataset: no samples");
    if (static_cast<int>(labels.size()) != n())
      throw std::invalid_argument("dataset: label count != sample count");
    for (int y : labels)
      if (y < 0 || y >= class_count)
        throw std::invalid_argument("dataset: label out of range");
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(class_count), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }
};

struct SplitSpec {
  double train_fraction = 0.9;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_fraction <= 0.0 || train_fraction > 1.0)
      throw std::invalid_argument("split: train_fraction must be in (0,1]");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      throw std::invalid_argument("split: validation_fraction must be in [0,1)");
    if (train_fraction + validation_fraction > 1.0 + 1e-12)
      throw std::invalid_argument("split: fractions sum above 1");
  }
};

namespace detail {

inline std::uint32_t read_be_u32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw TruncatedFile("short read on " + path);
  return buf;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image/label pair (big-endian headers, one byte per pixel and
// per label). Pixels are scaled to [0,1] by dividing the raw byte by 255.
inline Dataset load_mnist_idx(const std::string& images_path,
                              const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw TruncatedFile(images_path + ": header truncated");
  if (lab.size() < 8) throw TruncatedFile(labels_path + ": header truncated");

  const std::uint32_t img_magic = detail::read_be_u32(img.data());
  const std::uint32_t lab_magic = detail::read_be_u32(lab.data());
  if (img_magic != kIdxImageMagic)
    throw BadMagic(images_path + ": expected image magic 0x803");
  if (lab_magic != kIdxLabelMagic)
    throw BadMagic(labels_path + ": expected label magic 0x801");

  const std::uint32_t n_img = detail::read_be_u32(img.data() + 4);
  const std::uint32_t rows = detail::read_be_u32(img.data() + 8);
  const std::uint32_t cols = detail::read_be_u32(img.data() + 12);
  const std::uint32_t n_lab = detail::read_be_u32(lab.data() + 4);
  if (n_img != n_lab)
    throw CountMismatch("image count " + std::to_string(n_img) +
                        " != label count " + std::to_string(n_lab));

  const std::size_t pixels = std::size_t(rows) * cols;
  if (img.size() != 16 + std::size_t(n_img) * pixels)
    throw TruncatedFile(images_path + ": pixel payload size mismatch");
  if (lab.size() != 8 + std::size_t(n_lab))
    throw TruncatedFile(labels_path + ": label payload size mismatch");

  Dataset d;
  d.features.resize(n_img, static_cast<Eigen::Index>(pixels));
  d.labels.resize(n_img);
  for (std::uint32_t i = 0; i < n_img; ++i) {
    const unsigned char* px = img.data() + 16 + std::size_t(i) * pixels;
    for (std::size_t j = 0; j < pixels; ++j)
      d.features(i, static_cast<Eigen::Index>(j)) = px[j] / 255.0;
    d.labels[i] = lab[8 + i];
  }
  d.class_count = 10;
  d.split_tag = SplitTag::train;
  d.validate();
  return d;
}

// Inverse of load_mnist_idx. Pixels written as round(value * 255); a dataset
// produced by the loader round-trips byte-identically. rows*cols must factor
// the feature width; square images are assumed when rows==0.
inline void write_mnist_idx(const Dataset& d, const std::string& images_path,
                            const std::string& labels_path, int rows = 0,
                            int cols = 0) {
  if (rows <= 0 || cols <= 0) {
    const int side = static_cast<int>(std::lround(std::sqrt(double(d.dim()))));
    if (side * side != d.dim())
      throw std::invalid_argument("write_mnist_idx: pass rows/cols for non-square data");
    rows = cols = side;
  }
  if (rows * cols != d.dim())
    throw std::invalid_argument("write_mnist_idx: rows*cols != feature width");

  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw std::runtime_error("write_mnist_idx: cannot open output");

  detail::write_be_u32(img, kIdxImageMagic);
  detail::write_be_u32(img, static_cast<std::uint32_t>(d.n()));
  detail::write_be_u32(img, static_cast<std::uint32_t>(rows));
  detail::write_be_u32(img, static_cast<std::uint32_t>(cols));
  detail::write_be_u32(lab, kIdxLabelMagic);
  detail::write_be_u32(lab, static_cast<std::uint32_t>(d.n()));

  std::vector<unsigned char> row(static_cast<std::size_t>(d.dim()));
  for (int i = 0; i < d.n(); ++i) {
    for (int j = 0; j < d.dim(); ++j) {
      const double v = std::min(1.0, std::max(0.0, d.features(i, j)));
      row[static_cast<std::size_t>(j)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
    const unsigned char y = static_cast<unsigned char>(d.labels[static_cast<std::size_t>(i)]);
    lab.write(reinterpret_cast<const char*>(&y), 1);
  }
}

// CSV with a header row `label,f0,f1,...`.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TruncatedFile("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw TruncatedFile(path + ": empty file");
  if (line.rfind("label", 0) != 0)
    throw BadMagic(path + ": missing `label,f0,...` header");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int width = -1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.empty()) continue;
    if (width < 0) width = static_cast<int>(vals.size()) - 1;
    if (static_cast<int>(vals.size()) - 1 != width)
      throw CountMismatch(path + ": ragged row");
    labels.push_back(static_cast<int>(std::lround(vals[0])));
    rows.emplace_back(vals.begin() + 1, vals.end());
  }
  if (rows.empty()) throw EmptyResult(path + ": no data rows");

  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), width);
  d.labels = labels;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < width; ++j)
      d.features(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  d.class_count = 1 + *std::max_element(labels.begin(), labels.end());
  d.validate();
  return d;
}

// Isotropic Gaussian blobs: class c is centered at class_sep * e_{c mod dim}.
// Samples are emitted grouped by class, deterministically in the seed.
inline Dataset make_gaussian_blobs(int n_per_class, int class_count, int dim,
                                   double class_sep, std::uint64_t seed) {
  if (n_per_class <= 0 || class_count <= 0 || dim <= 0 || class_sep <= 0.0)
    throw std::invalid_argument("make_gaussian_blobs: arguments must be positive");
  Dataset d;
  d.features.resize(Eigen::Index(n_per_class) * class_count, dim);
  d.labels.resize(static_cast<std::size_t>(n_per_class) * class_count);
  d.class_count = class_count;
  Rng rng(derive_seed(seed, "blobs"));
  Eigen::Index row = 0;
  for (int c = 0; c < class_count; ++c) {
    const int axis = c % dim;
    for (int s = 0; s < n_per_class; ++s, ++row) {
      for (int j = 0; j < dim; ++j)
        d.features(row, j) = rng.next_gaussian() + (j == axis ? class_sep : 0.0);
      d.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return d;
}

// Drops floor(removal_fraction * n_c) samples from floor(affected_fraction*C)
// seed-chosen classes; all other samples are kept untouched, original order.
inline Dataset induce_class_imbalance(const Dataset& d, double affected_fraction,
                                      double removal_fraction, std::uint64_t seed) {
  if (affected_fraction < 0.0 || affected_fraction > 1.0 ||
      removal_fraction < 0.0 || removal_fraction > 1.0)
    throw std::invalid_argument("induce_class_imbalance: fractions must be in [0,1]");

  const int n_affected = static_cast<int>(affected_fraction * d.class_count);
  if (n_affected == 0 || removal_fraction == 0.0) return d;

  Rng rng(derive_seed(seed, "imbalance"));
  const std::vector<int> affected =
      rng.sample_without_replacement(d.class_count, n_affected);
  std::vector<bool> is_affected(static_cast<std::size_t>(d.class_count), false);
  for (int c : affected) is_affected[static_cast<std::size_t>(c)] = true;

  const std::vector<int> counts = d.class_counts();
  std::vector<bool> drop(static_cast<std::size_t>(d.n()), false);
  for (int c = 0; c < d.class_count; ++c) {
    if (!is_affected[static_cast<std::size_t>(c)]) continue;
    const int n_c = counts[static_cast<std::size_t>(c)];
    const int n_drop = static_cast<int>(removal_fraction * n_c);
    if (n_drop >= n_c)
      throw EmptyResult("induce_class_imbalance: class " + std::to_string(c) +
                        " would be emptied");
    std::vector<int> members;
    members.reserve(static_cast<std::size_t>(n_c));
    for (int i = 0; i < d.n(); ++i)
      if (d.labels[static_cast<std::size_t>(i)] == c) members.push_back(i);
    for (int pos : rng.sample_without_replacement(n_c, n_drop))
      drop[static_cast<std::size_t>(members[static_cast<std::size_t>(pos)])] = true;
  }

  Dataset out;
  out.class_count = d.class_count;
  out.split_tag = d.split_tag;
  const int kept = d.n() - static_cast<int>(std::count(drop.begin(), drop.end(), true));
  out.features.resize(kept, d.dim());
  out.labels.reserve(static_cast<std::size_t>(kept));
  Eigen::Index row = 0;
  for (int i = 0; i < d.n(); ++i) {
    if (drop[static_cast<std::size_t>(i)]) continue;
    out.features.row(row++) = d.features.row(i);
    out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Seeded shuffle, then floor(train)/floor(validation)/remainder slices.
inline std::array<Dataset, 3> split(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  std::vector<int> order(static_cast<std::size_t>(d.n()));
  for (int i = 0; i < d.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(spec.seed, "split"));
  rng.shuffle(order);

  const int n_train = static_cast<int>(spec.train_fraction * d.n());
  const int n_val = static_cast<int>(spec.validation_fraction * d.n());

  auto take = [&](int begin, int count, SplitTag tag) {
    Dataset out;
    out.class_count = d.class_count;
    out.split_tag = tag;
    out.features.resize(count, d.dim());
    out.labels.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int src = order[static_cast<std::size_t>(begin + i)];
      out.features.row(i) = d.features.row(src);
      out.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(src)];
    }
    return out;
  };

  return {take(0, n_train, SplitTag::train),
          take(n_train, n_val, SplitTag::validation),
          take(n_train + n_val, d.n() - n_train - n_val, SplitTag::test)};
}

}  // namespace gradmatch
