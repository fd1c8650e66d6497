#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gradmatch/errors.hpp"
#include "gradmatch/model.hpp"

namespace gradmatch {

enum class ElementKind { sample, batch, class_restricted };

// Ground set for subset selection: one gradient row per element (sample,
// mini-batch sum, or class-restricted sample) and the target gradient the
// weighted sum is matched against.
struct GradientBank {
  Matrix rows;    // n_elements x d_g
  Vector target;  // d_g
  ElementKind kind = ElementKind::sample;
  int batch_size = 0;  // batch banks only
  int class_id = -1;   // class-restricted banks only
  std::vector<std::vector<int>> element_map;  // row -> covered sample indices

  int n_elements() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

namespace detail {

// Chunk size for streamed gradient accumulation; keeps peak memory at
// chunk * d_g regardless of dataset size.
inline constexpr int kGradChunk = 512;

inline Vector target_sum(const ModelState& m, const Dataset& source) {
  Vector total = Vector::Zero(m.last_layer_dim());
  const auto idx = all_indices(source);
  for (int begin = 0; begin < source.n(); begin += kGradChunk) {
    const int len = std::min(kGradChunk, source.n() - begin);
    const std::span<const int> chunk(idx.data() + begin, static_cast<std::size_t>(len));
    total += last_layer_grads(m, source, chunk).colwise().sum().transpose();
  }
  return total;
}

}  // namespace detail

// Per-sample bank: one last-layer gradient row per training sample. The
// target is the summed gradient over the validation set when is_valid, else
// over the training set itself (exactly the column sum of the rows).
inline GradientBank build_per_sample(const ModelState& m, const Dataset& train,
                                     const Dataset& target_source, bool is_valid) {
  GradientBank bank;
  bank.kind = ElementKind::sample;
  bank.rows = last_layer_grads(m, train, all_indices(train));
  bank.target = is_valid ? detail::target_sum(m, target_source)
                         : Vector(bank.rows.colwise().sum());
  bank.element_map.resize(static_cast<std::size_t>(train.n()));
  for (int i = 0; i < train.n(); ++i) bank.element_map[static_cast<std::size_t>(i)] = {i};
  return bank;
}

// Per-batch bank: a seeded shuffle followed by contiguous chunks of size B;
// each row is the SUM of its members' gradients so that the rows still add up
// to the full training gradient.
inline GradientBank build_per_batch(const ModelState& m, const Dataset& train,
                                    int batch_size, bool is_valid,
                                    const Dataset& target_source,
                                    std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("build_per_batch: B >= 1 required");
  std::vector<int> order = all_indices(train);
  Rng rng(derive_seed(shuffle_seed, "batch_partition"));
  rng.shuffle(order);

  const int n = train.n();
  const int n_batches = (n + batch_size - 1) / batch_size;

  GradientBank bank;
  bank.kind = ElementKind::batch;
  bank.batch_size = batch_size;
  bank.rows = Matrix::Zero(n_batches, m.last_layer_dim());
  bank.element_map.resize(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    const int begin = b * batch_size;
    const int len = std::min(n, begin + batch_size) - begin;
    const std::span<const int> members(order.data() + begin,
                                       static_cast<std::size_t>(len));
    // Sequential accumulation in member order keeps the row bit-identical to
    // the sum of the per-sample gradients.
    const Matrix grads = last_layer_grads(m, train, members);
    for (int r = 0; r < len; ++r) bank.rows.row(b) += grads.row(r);
    bank.element_map[static_cast<std::size_t>(b)].assign(members.begin(),
                                                         members.end());
  }
  bank.target = is_valid ? detail::target_sum(m, target_source)
                         : Vector(bank.rows.colwise().sum());
  return bank;
}

// Per-class / per-gradient bank: rows are restricted to samples of one class
// and to that class's (bias, weights) block of the last layer, d_g = h + 1.
// The target is equally restricted.
inline GradientBank build_per_class(const ModelState& m, const Dataset& train,
                                    int class_id, bool is_valid,
                                    const Dataset& target_source) {
  std::vector<int> members;
  for (int i = 0; i < train.n(); ++i)
    if (train.labels[static_cast<std::size_t>(i)] == class_id) members.push_back(i);
  if (members.empty())
    throw EmptyClass("build_per_class: class " + std::to_string(class_id) +
                     " has no training samples");

  const int block = m.penultimate_width() + 1;
  const Eigen::Index offset = Eigen::Index(class_id) * block;

  GradientBank bank;
  bank.kind = ElementKind::class_restricted;
  bank.class_id = class_id;
  bank.rows.resize(static_cast<Eigen::Index>(members.size()), block);
  bank.element_map.reserve(members.size());
  for (int i : members) bank.element_map.push_back({i});
  // Slice the class block chunk by chunk; the full-width gradient matrix of
  // a big class would be C times larger than the bank itself.
  for (std::size_t begin = 0; begin < members.size(); begin += detail::kGradChunk) {
    const std::size_t len = std::min<std::size_t>(detail::kGradChunk,
                                                  members.size() - begin);
    const std::span<const int> chunk(members.data() + begin, len);
    bank.rows.middleRows(static_cast<Eigen::Index>(begin),
                         static_cast<Eigen::Index>(len)) =
        last_layer_grads(m, train, chunk).middleCols(offset, block);
  }

  if (is_valid) {
    std::vector<int> val_members;
    for (int i = 0; i < target_source.n(); ++i)
      if (target_source.labels[static_cast<std::size_t>(i)] == class_id)
        val_members.push_back(i);
    bank.target = Vector::Zero(block);
    for (std::size_t begin = 0; begin < val_members.size();
         begin += detail::kGradChunk) {
      const std::size_t len = std::min<std::size_t>(detail::kGradChunk,
                                                    val_members.size() - begin);
      const std::span<const int> chunk(val_members.data() + begin, len);
      bank.target += last_layer_grads(m, target_source, chunk)
                         .middleCols(offset, block)
                         .colwise()
                         .sum()
                         .transpose();
    }
  } else {
    bank.target = bank.rows.colwise().sum();
  }
  return bank;
}

// Flat binary dump: two little-endian int32 header fields (n_elements, d_g),
// then the rows in row-major float64, then the target.
inline void dump_bank_binary(const GradientBank& bank, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_bank_binary: cannot open " + path);
  const std::int32_t header[2] = {bank.n_elements(), bank.dim()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<double> row(static_cast<std::size_t>(bank.dim()));
  for (int i = 0; i < bank.n_elements(); ++i) {
    for (int j = 0; j < bank.dim(); ++j) row[static_cast<std::size_t>(j)] = bank.rows(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  out.write(reinterpret_cast<const char*>(bank.target.data()),
            static_cast<std::streamsize>(static_cast<std::size_t>(bank.dim()) * sizeof(double)));
}

// Flat CSV dump for offline inspection: `n_elements,d_g` header then one
// row per line, target last.
inline void dump_bank_csv(const GradientBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_bank_csv: cannot open " + path);
  out.precision(17);
  out << bank.n_elements() << "," << bank.dim() << "\n";
  for (int i = 0; i < bank.n_elements(); ++i) {
    for (int j = 0; j < bank.dim(); ++j)
      out << (j ? "," : "") << bank.rows(i, j);
    out << "\n";
  }
  for (int j = 0; j < bank.dim(); ++j) out << (j ? "," : "") << bank.target[j];
  out << "\n";
}

}  // namespace gradmatch
