#include "disp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <set>

#include "disp/errors.hpp"

using namespace disp;

namespace {

RawMnistSet toy_raw(std::size_t count, std::size_t rows = 6, std::size_t cols = 6) {
  RawMnistSet raw;
  raw.count = count;
  raw.rows = rows;
  raw.cols = cols;
  raw.images.assign(count * rows * cols, 0);
  raw.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    raw.labels[i] = static_cast<std::uint8_t>(i % 10);
    // A bright block in the middle, dim halo around it.
    for (std::size_t y = 1; y + 1 < rows; ++y)
      for (std::size_t x = 1; x + 1 < cols; ++x) raw.images[i * rows * cols + y * cols + x] = 20;
    for (std::size_t y = 2; y + 2 < rows; ++y)
      for (std::size_t x = 2; x + 2 < cols; ++x)
        raw.images[i * rows * cols + y * cols + x] = static_cast<std::uint8_t>(120 + (i % 100));
  }
  return raw;
}

}  // namespace

TEST_CASE("parse_idx decodes images and labels headers") {
  // 2 images of 2x2: magic 0x00000803, dims 2,2,2, 8 payload bytes.
  std::vector<std::uint8_t> bytes = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                     1, 2, 3, 4, 5, 6, 7, 8};
  IdxArray images = parse_idx(bytes);
  REQUIRE(images.dims == std::vector<std::size_t>{2, 2, 2});
  CHECK(images.data == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8});

  std::vector<std::uint8_t> labels = {0, 0, 8, 1, 0, 0, 0, 5, 9, 8, 7, 6, 5};
  CHECK(parse_idx(labels).data.size() == 5);
}

TEST_CASE("parse_idx rejects wrong magic and short payloads") {
  std::vector<std::uint8_t> wrong = {0, 0, 9, 9, 0, 0, 0, 1};
  CHECK_THROWS_WITH_AS(parse_idx(wrong), doctest::Contains("not an IDX file"), DataError);

  std::vector<std::uint8_t> truncated = {0, 0, 8, 1, 0, 0, 0, 9, 1, 2};
  CHECK_THROWS_WITH_AS(parse_idx(truncated), doctest::Contains("corrupt file"), DataError);
}

TEST_CASE("idx round-trip through the writer") {
  auto dir = std::filesystem::temp_directory_path() / "disp_idx_rt";
  std::filesystem::create_directories(dir);
  RawMnistSet raw = toy_raw(23);
  write_idx_images(dir / "t-images-idx3-ubyte", raw);
  write_idx_labels(dir / "t-labels-idx1-ubyte", raw);
  RawMnistSet back = load_mnist(dir, "t");
  CHECK(back.count == raw.count);
  CHECK(back.rows == raw.rows);
  CHECK(back.images == raw.images);
  CHECK(back.labels == raw.labels);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_mnist names the missing file") {
  CHECK_THROWS_WITH_AS(load_mnist("/nonexistent-dir", "train"),
                       doctest::Contains("train-images-idx3-ubyte"), DataError);
}

TEST_CASE("standard palette is separable") {
  Palette p = Palette::standard();
  CHECK(p.min_pairwise_distance() >= 0.3);
  p.validate();

  Palette bad = p;
  bad.colors[1] = bad.colors[0];
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("rho = 1 pins every color to its digit") {
  RawMnistSet raw = toy_raw(200);
  auto colors = assign_colors(raw.labels, 1.0, 3, 1);
  for (std::size_t i = 0; i < raw.count; ++i) CHECK(colors[i] == raw.labels[i]);
}

TEST_CASE("rho = 0.1 gives near-uniform color frequencies (3-sigma)") {
  std::vector<std::uint8_t> labels(6000, 7);
  auto colors = assign_colors(labels, 0.1, 11, 1);
  std::array<std::size_t, 10> counts{};
  for (int c : colors) counts[static_cast<std::size_t>(c)]++;
  double expect = 600.0, sigma = std::sqrt(6000 * 0.1 * 0.9);
  for (std::size_t c = 0; c < 10; ++c)
    CHECK(std::fabs(static_cast<double>(counts[c]) - expect) < 3.0 * sigma);
}

TEST_CASE("chi-square goodness of fit for P(p|t) across rho levels") {
  // df = 9, alpha = 0.01 critical value.
  const double kCritical = 21.666;
  std::vector<std::uint8_t> labels(60000);
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = static_cast<std::uint8_t>(i % 10);

  for (double rho : {0.1, 0.5, 0.9, 0.99}) {
    auto colors = assign_colors(labels, rho, 20260810, 1);
    for (int t = 0; t < 10; ++t) {
      std::array<double, 10> observed{};
      double n = 0;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == t) {
          observed[static_cast<std::size_t>(colors[i])] += 1;
          n += 1;
        }
      double stat = 0.0;
      for (int p = 0; p < 10; ++p) {
        double e = (p == t) ? rho * n : (1.0 - rho) / 9.0 * n;
        stat += (observed[static_cast<std::size_t>(p)] - e) *
                (observed[static_cast<std::size_t>(p)] - e) / e;
      }
      CHECK_MESSAGE(stat < kCritical, "rho=", rho, " t=", t, " stat=", stat);
    }
  }
}

TEST_CASE("colorize is deterministic and preserves foreground strokes") {
  RawMnistSet raw = toy_raw(40);
  BiasConfig cfg;
  cfg.rho = 0.3;
  cfg.seed = 5;
  auto a = colorize(raw, cfg, Palette::standard());
  auto b = colorize(raw, cfg, Palette::standard());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].priv == b[i].priv);
    CHECK(a[i].image == b[i].image);
  }

  // Foreground: equal channels, exact grayscale/255; background: palette.
  for (const auto& rec : a) {
    std::size_t hw = rec.height * rec.width;
    for (std::size_t p = 0; p < hw; ++p) {
      std::uint8_t g = raw.images[(&rec - a.data()) * hw + p];
      if (g > cfg.background_threshold) {
        CHECK(rec.image[p] == g / 255.0);
        CHECK(rec.image[p] == rec.image[hw + p]);
        CHECK(rec.image[p] == rec.image[2 * hw + p]);
      } else {
        CHECK(rec.image[p] ==
              Palette::standard().colors[static_cast<std::size_t>(rec.priv)][0]);
      }
    }
  }
}

TEST_CASE("split: exact sizes, disjoint covering, deterministic") {
  auto s = split(100, {0.9, 0.1, 0.0}, 7);
  CHECK(s.train.size() == 90);
  CHECK(s.validation.size() == 10);
  CHECK(s.test.size() == 0);

  auto s2 = split(100, {0.9, 0.1, 0.0}, 7);
  CHECK(s.train == s2.train);

  std::set<std::size_t> all;
  for (auto v : {&s.train, &s.validation, &s.test})
    for (std::size_t i : *v) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);

  CHECK_THROWS_AS(split(10, {0.5, 0.1, 0.1}, 0), ConfigError);
}

TEST_CASE("build: train colorized at rho, test at the unbiased level") {
  RawMnistSet raw = toy_raw(4000);
  BiasConfig cfg;
  cfg.rho = 0.99;
  cfg.seed = 13;
  cfg.fractions = {0.5, 0.25, 0.25};
  auto ds = build_biased_dataset(raw, cfg, Palette::standard());

  auto diag_fraction = [&](SplitTag tag) {
    std::size_t n = 0, diag = 0;
    for (const auto& rec : ds.records)
      if (rec.split == tag) {
        ++n;
        diag += rec.priv == rec.target;
      }
    return static_cast<double>(diag) / static_cast<double>(n);
  };
  CHECK(diag_fraction(SplitTag::train) > 0.95);
  CHECK(diag_fraction(SplitTag::test) < 0.25);
}

TEST_CASE("downscale averages 2x2 blocks") {
  std::vector<double> img = {1, 2, 3, 4};  // one channel, 2x2
  auto out = downscale_image(img, 1, 2, 2, 2);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == doctest::Approx(2.5));
}

TEST_CASE("dataset save/load reproduces records bit-exactly") {
  RawMnistSet raw = toy_raw(300, 8, 8);
  BiasConfig cfg;
  cfg.rho = 0.7;
  cfg.seed = 21;
  cfg.downscale_factor = 2;
  cfg.subset_size = 200;
  cfg.fractions = {0.6, 0.2, 0.2};
  auto ds = build_biased_dataset(raw, cfg, Palette::standard());

  auto dir = std::filesystem::temp_directory_path() / "disp_ds_rt";
  save_dataset(ds, raw, dir);
  auto back = load_dataset(dir);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].target == ds.records[i].target);
    CHECK(back.records[i].priv == ds.records[i].priv);
    CHECK(back.records[i].split == ds.records[i].split);
    CHECK(back.records[i].image == ds.records[i].image);
  }
  CHECK(back.manifest.indices.train == ds.manifest.indices.train);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid rho is rejected") {
  BiasConfig cfg;
  cfg.rho = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
