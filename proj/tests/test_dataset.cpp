#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "gradmatch/dataset.hpp"

using namespace gradmatch;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "gradmatch_dataset_tests";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// Hand-built IDX pair with a given number of images.
void write_idx_pair(const fs::path& img_path, const fs::path& lab_path,
                    const std::vector<std::vector<unsigned char>>& images,
                    const std::vector<unsigned char>& labels, int rows, int cols,
                    std::uint32_t image_count_override = 0,
                    std::uint32_t label_count_override = 0) {
  std::ofstream img(img_path, std::ios::binary);
  std::ofstream lab(lab_path, std::ios::binary);
  auto be = [](std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  be(img, kIdxImageMagic);
  be(img, image_count_override ? image_count_override
                               : static_cast<std::uint32_t>(images.size()));
  be(img, static_cast<std::uint32_t>(rows));
  be(img, static_cast<std::uint32_t>(cols));
  for (const auto& image : images)
    img.write(reinterpret_cast<const char*>(image.data()),
              static_cast<std::streamsize>(image.size()));
  be(lab, kIdxLabelMagic);
  be(lab, label_count_override ? label_count_override
                               : static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

}  // namespace

TEST_CASE("idx loader round-trips a one-image synthetic pair") {
  const auto img = temp_dir() / "one.img";
  const auto lab = temp_dir() / "one.lab";
  write_idx_pair(img, lab, {std::vector<unsigned char>(784, 0)}, {7}, 28, 28);

  const Dataset d = load_mnist_idx(img.string(), lab.string());
  CHECK(d.n() == 1);
  CHECK(d.dim() == 784);
  CHECK(d.labels[0] == 7);
  CHECK(d.features.row(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("idx loader rejects bad magic, count mismatch, truncation") {
  const auto img = temp_dir() / "bad.img";
  const auto lab = temp_dir() / "bad.lab";

  // Count mismatch: labels claim 5, images carry 4.
  std::vector<std::vector<unsigned char>> images(4, std::vector<unsigned char>(4, 1));
  write_idx_pair(img, lab, images, {0, 1, 2, 3}, 2, 2, 0, 5);
  CHECK_THROWS_AS(load_mnist_idx(img.string(), lab.string()), CountMismatch);

  // Bad magic on the image file.
  {
    std::ofstream out(img, std::ios::binary);
    const char junk[16] = {0, 0, 1, 1};
    out.write(junk, 16);
  }
  write_idx_pair(temp_dir() / "ok.img", lab, images, {0, 1, 2, 3}, 2, 2);
  CHECK_THROWS_AS(load_mnist_idx(img.string(), lab.string()), BadMagic);

  // Truncated payload.
  write_idx_pair(img, lab, images, {0, 1, 2, 3}, 2, 2);
  fs::resize_file(img, fs::file_size(img) - 3);
  CHECK_THROWS_AS(load_mnist_idx(img.string(), lab.string()), TruncatedFile);
}

TEST_CASE("idx writer reproduces parsed bytes exactly") {
  const auto img = temp_dir() / "rt.img";
  const auto lab = temp_dir() / "rt.lab";
  Rng rng(123);
  std::vector<std::vector<unsigned char>> images;
  std::vector<unsigned char> labels;
  for (int i = 0; i < 9; ++i) {
    std::vector<unsigned char> px(16);
    for (auto& p : px) p = static_cast<unsigned char>(rng.next_below(256));
    images.push_back(px);
    labels.push_back(static_cast<unsigned char>(rng.next_below(10)));
  }
  write_idx_pair(img, lab, images, labels, 4, 4);

  const Dataset d = load_mnist_idx(img.string(), lab.string());
  const auto img2 = temp_dir() / "rt2.img";
  const auto lab2 = temp_dir() / "rt2.lab";
  write_mnist_idx(d, img2.string(), lab2.string());

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(img) == slurp(img2));
  CHECK(slurp(lab) == slurp(lab2));
}

TEST_CASE("official mnist sizes when files are present") {
  const char* dir = std::getenv("MNIST_DIR");
  if (!dir) return;  // optional fixture
  const Dataset d = load_mnist_idx(std::string(dir) + "/train-images-idx3-ubyte",
                                   std::string(dir) + "/train-labels-idx1-ubyte");
  CHECK(d.n() == 60000);
  CHECK(d.dim() == 784);
  CHECK(d.class_count == 10);
}

TEST_CASE("gaussian blobs: counts, labels, determinism") {
  const Dataset d = make_gaussian_blobs(2, 2, 2, 10.0, 1);
  CHECK(d.n() == 4);
  CHECK(d.labels == std::vector<int>{0, 0, 1, 1});

  const Dataset d2 = make_gaussian_blobs(2, 2, 2, 10.0, 1);
  CHECK(d.features == d2.features);

  const Dataset d3 = make_gaussian_blobs(2, 2, 2, 10.0, 2);
  CHECK(d.features != d3.features);
}

TEST_CASE("class imbalance: paper ratios and conservation") {
  const Dataset balanced = make_gaussian_blobs(100, 10, 4, 5.0, 3);
  const Dataset imb = induce_class_imbalance(balanced, 0.3, 0.9, 17);

  auto counts = imb.class_counts();
  int reduced = 0, untouched = 0;
  for (int c : counts) {
    if (c == 10) ++reduced;
    if (c == 100) ++untouched;
  }
  CHECK(reduced == 3);
  CHECK(untouched == 7);
  CHECK(imb.n() == 3 * 10 + 7 * 100);

  // Untouched classes keep exactly their original samples, original order.
  std::vector<int> affected;
  for (int c = 0; c < 10; ++c)
    if (counts[static_cast<std::size_t>(c)] == 10) affected.push_back(c);
  Eigen::Index src = 0, dst = 0;
  for (; src < balanced.n(); ++src) {
    const int y = balanced.labels[static_cast<std::size_t>(src)];
    if (std::find(affected.begin(), affected.end(), y) != affected.end()) continue;
    // scan forward in imb to the next sample of an untouched class
    while (std::find(affected.begin(), affected.end(),
                     imb.labels[static_cast<std::size_t>(dst)]) != affected.end())
      ++dst;
    CHECK(imb.features.row(dst) == balanced.features.row(src));
    ++dst;
  }
}

TEST_CASE("class imbalance edge cases") {
  const Dataset d = make_gaussian_blobs(10, 2, 3, 4.0, 5);

  const Dataset same = induce_class_imbalance(d, 0.0, 0.9, 1);
  CHECK(same.features == d.features);

  const Dataset half = induce_class_imbalance(d, 0.5, 0.5, 1);
  const auto counts = half.class_counts();
  CHECK(half.n() == 15);
  CHECK(((counts[0] == 5 && counts[1] == 10) || (counts[0] == 10 && counts[1] == 5)));

  CHECK_THROWS_AS(induce_class_imbalance(d, 0.5, 1.0, 1), EmptyResult);
}

TEST_CASE("split sizes and partition property") {
  const Dataset d = make_gaussian_blobs(50, 2, 3, 4.0, 9);  // n = 100

  auto [tr, va, te] = split(d, {.train_fraction = 0.9, .validation_fraction = 0.1, .seed = 4});
  CHECK(tr.n() == 90);
  CHECK(va.n() == 10);
  CHECK(te.n() == 0);
  CHECK(tr.split_tag == SplitTag::train);
  CHECK(va.split_tag == SplitTag::validation);

  auto [tr2, va2, te2] =
      split(d, {.train_fraction = 0.7, .validation_fraction = 0.1, .seed = 4});
  CHECK(tr2.n() == 70);
  CHECK(va2.n() == 10);
  CHECK(te2.n() == 20);

  // Disjoint union: every original row appears exactly once across splits.
  std::multiset<double> original, recombined;
  for (int i = 0; i < d.n(); ++i) original.insert(d.features.row(i).sum());
  for (const Dataset* part : {&tr2, &va2, &te2})
    for (int i = 0; i < part->n(); ++i) recombined.insert(part->features.row(i).sum());
  CHECK(original == recombined);

  const Dataset small = make_gaussian_blobs(5, 2, 3, 4.0, 9);  // n = 10
  auto [tr3, va3, te3] =
      split(small, {.train_fraction = 1.0, .validation_fraction = 0.0, .seed = 1});
  CHECK(tr3.n() == 10);
  CHECK(va3.n() == 0);
  CHECK(te3.n() == 0);
}

TEST_CASE("imbalance and split are pure functions of their seed") {
  const Dataset d = make_gaussian_blobs(40, 5, 3, 4.0, 2);

  const Dataset a = induce_class_imbalance(d, 0.4, 0.5, 123);
  const Dataset b = induce_class_imbalance(d, 0.4, 0.5, 123);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  const Dataset c = induce_class_imbalance(d, 0.4, 0.5, 124);
  CHECK(a.features != c.features);

  const SplitSpec spec{0.6, 0.2, 9};
  auto s1 = split(d, spec);
  auto s2 = split(d, spec);
  for (int part = 0; part < 3; ++part) {
    CHECK(s1[static_cast<std::size_t>(part)].features ==
          s2[static_cast<std::size_t>(part)].features);
    CHECK(s1[static_cast<std::size_t>(part)].labels ==
          s2[static_cast<std::size_t>(part)].labels);
  }
}

TEST_CASE("csv loader parses header format") {
  const auto path = temp_dir() / "tiny.csv";
  {
    std::ofstream out(path);
    out << "label,f0,f1\n1,0.5,-2\n0,1.25,3\n";
  }
  const Dataset d = load_csv(path.string());
  CHECK(d.n() == 2);
  CHECK(d.dim() == 2);
  CHECK(d.class_count == 2);
  CHECK(d.labels == std::vector<int>{1, 0});
  CHECK(d.features(0, 1) == -2.0);
}
