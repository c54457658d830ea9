#include "disp/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "disp/errors.hpp"
#include "disp/rng.hpp"

namespace disp {

namespace {

using nlohmann::json;

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

constexpr std::uint64_t kStreamSubset = 0x53554253;     // "SUBS"
constexpr std::uint64_t kStreamSplit = 0x53504C54;      // "SPLT"
constexpr std::uint64_t kStreamColorTrain = 0x434F4C31;  // "COL1"
constexpr std::uint64_t kStreamColorTest = 0x434F4C32;   // "COL2"

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                       std::uint8_t(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw DataError("not an IDX file: shorter than the magic");
  std::uint32_t magic = read_be32(bytes.data());
  std::size_t ndims;
  if (magic == kImagesMagic)
    ndims = 3;
  else if (magic == kLabelsMagic)
    ndims = 1;
  else
    throw DataError("not an IDX file: unexpected magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%08x", magic);
      return std::string(buf);
    }());

  if (bytes.size() < 4 + 4 * ndims) throw DataError("corrupt file: truncated IDX header");
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    std::size_t extent = read_be32(bytes.data() + 4 + 4 * d);
    out.dims.push_back(extent);
    total *= extent;
  }
  if (bytes.size() < 4 + 4 * ndims + total)
    throw DataError("corrupt file: payload shorter than the header promises");
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndims),
                  bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndims + total));
  return out;
}

IdxArray read_idx_file(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
  bool bad = n < 0;
  gzclose(f);
  if (bad) throw DataError("corrupt file: " + path.string());
  return parse_idx(bytes);
}

void write_idx_images(const std::filesystem::path& path, const RawMnistSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_be32(os, kImagesMagic);
  write_be32(os, static_cast<std::uint32_t>(set.count));
  write_be32(os, static_cast<std::uint32_t>(set.rows));
  write_be32(os, static_cast<std::uint32_t>(set.cols));
  os.write(reinterpret_cast<const char*>(set.images.data()),
           static_cast<std::streamsize>(set.images.size()));
}

void write_idx_labels(const std::filesystem::path& path, const RawMnistSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_be32(os, kLabelsMagic);
  write_be32(os, static_cast<std::uint32_t>(set.count));
  os.write(reinterpret_cast<const char*>(set.labels.data()),
           static_cast<std::streamsize>(set.labels.size()));
}

RawMnistSet load_mnist(const std::filesystem::path& dir, const std::string& prefix) {
  auto find = [&](const std::string& stem) -> std::filesystem::path {
    for (const char* suffix : {"", ".gz"}) {
      auto p = dir / (stem + suffix);
      if (std::filesystem::exists(p)) return p;
    }
    throw DataError("missing raw MNIST file: expected " + (dir / stem).string() +
                    " (or .gz); point the dataset config at a directory holding the "
                    "standard IDX files");
  };

  IdxArray images = read_idx_file(find(prefix + "-images-idx3-ubyte"));
  IdxArray labels = read_idx_file(find(prefix + "-labels-idx1-ubyte"));
  if (images.dims.size() != 3) throw DataError("corrupt file: image set is not rank 3");
  RawMnistSet set;
  set.count = images.dims[0];
  set.rows = images.dims[1];
  set.cols = images.dims[2];
  set.images = std::move(images.data);
  set.labels = std::move(labels.data);
  if (set.labels.size() != set.count)
    throw DataError("corrupt file: image count " + std::to_string(set.count) +
                    " does not match label count " + std::to_string(set.labels.size()));
  return set;
}

double Palette::min_pairwise_distance() const {
  double best = 10.0;
  for (std::size_t i = 0; i < colors.size(); ++i)
    for (std::size_t j = i + 1; j < colors.size(); ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        double d = colors[i][k] - colors[j][k];
        sq += d * d;
      }
      best = std::min(best, std::sqrt(sq));
    }
  return best;
}

void Palette::validate() const {
  if (min_pairwise_distance() < 0.3)
    throw ConfigError("palette: colors closer than 0.3; private classes not separable");
}

Palette Palette::standard() {
  auto c = [](int r, int g, int b) {
    return std::array<double, 3>{r / 255.0, g / 255.0, b / 255.0};
  };
  return Palette{{{
      c(230, 25, 25),    // red
      c(60, 180, 75),    // green
      c(0, 130, 200),    // blue
      c(255, 225, 25),   // yellow
      c(240, 50, 230),   // magenta
      c(70, 240, 240),   // cyan
      c(245, 130, 48),   // orange
      c(145, 30, 180),   // purple
      c(170, 110, 40),   // brown
      c(250, 190, 212),  // pink
  }}};
}

void BiasConfig::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("dataset: rho must be a probability, got " + std::to_string(rho));
  if (downscale_factor == 0) throw ConfigError("dataset: downscale factor must be positive");
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(total - 1.0) > 1e-9)
    throw ConfigError("dataset: split fractions must sum to 1, got " + std::to_string(total));
}

std::vector<int> assign_colors(std::span<const std::uint8_t> digit_labels, double rho,
                               std::uint64_t seed, std::uint64_t stream) {
  CounterRng rng(seed, stream);
  std::vector<int> out(digit_labels.size());
  for (std::size_t i = 0; i < digit_labels.size(); ++i) {
    int t = digit_labels[i];
    if (rng.uniform(2 * i) < rho) {
      out[i] = t;
    } else {
      int k = static_cast<int>(rng.index(2 * i + 1, 9));
      out[i] = k < t ? k : k + 1;
    }
  }
  return out;
}

std::vector<double> colorize_image(std::span<const std::uint8_t> gray, std::size_t rows,
                                   std::size_t cols, int color, const Palette& palette,
                                   std::uint8_t threshold) {
  const auto& rgb = palette.colors[static_cast<std::size_t>(color)];
  std::vector<double> out(3 * rows * cols);
  for (std::size_t p = 0; p < rows * cols; ++p) {
    if (gray[p] <= threshold) {
      out[p] = rgb[0];
      out[rows * cols + p] = rgb[1];
      out[2 * rows * cols + p] = rgb[2];
    } else {
      double v = gray[p] / 255.0;
      out[p] = v;
      out[rows * cols + p] = v;
      out[2 * rows * cols + p] = v;
    }
  }
  return out;
}

std::vector<SampleRecord> colorize(const RawMnistSet& raw, const BiasConfig& cfg,
                                   const Palette& palette) {
  cfg.validate();
  palette.validate();
  auto colors = assign_colors(raw.labels, cfg.rho, cfg.seed, kStreamColorTrain);
  std::vector<SampleRecord> out(raw.count);
  for (std::size_t i = 0; i < raw.count; ++i) {
    SampleRecord& rec = out[i];
    rec.image = colorize_image({raw.images.data() + i * raw.rows * raw.cols,
                                raw.rows * raw.cols},
                               raw.rows, raw.cols, colors[i], palette,
                               cfg.background_threshold);
    rec.height = raw.rows;
    rec.width = raw.cols;
    rec.target = raw.labels[i];
    rec.priv = colors[i];
  }
  return out;
}

SplitIndices split(std::size_t count, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(count)));
  auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(count)));
  if (n_train + n_val > count) n_val = count - n_train;

  auto perm = shuffled_indices(count, seed, kStreamSplit);
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                        perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return out;
}

std::vector<double> downscale_image(std::span<const double> image, std::size_t channels,
                                    std::size_t rows, std::size_t cols, std::size_t factor) {
  if (factor == 1) return {image.begin(), image.end()};
  if (rows % factor != 0 || cols % factor != 0)
    throw ConfigError("downscale: image extent not divisible by factor");
  std::size_t r2 = rows / factor, c2 = cols / factor;
  std::vector<double> out(channels * r2 * c2);
  double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = 0; y < r2; ++y)
      for (std::size_t x = 0; x < c2; ++x) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            acc += image[ch * rows * cols + (y * factor + dy) * cols + (x * factor + dx)];
        out[ch * r2 * c2 + y * c2 + x] = acc * inv;
      }
  return out;
}

std::vector<const SampleRecord*> BiasedDataset::split_view(SplitTag tag) const {
  std::vector<const SampleRecord*> out;
  for (const auto& rec : records)
    if (rec.split == tag) out.push_back(&rec);
  return out;
}

BiasedDataset build_biased_dataset(const RawMnistSet& raw, const BiasConfig& cfg,
                                   const Palette& palette) {
  cfg.validate();
  palette.validate();
  if (raw.count == 0) throw DataError("dataset: raw set is empty");

  // Seeded subset first, then the three-way split over the subset.
  std::vector<std::size_t> pool;
  if (cfg.subset_size > 0 && cfg.subset_size < raw.count) {
    auto perm = shuffled_indices(raw.count, cfg.seed, kStreamSubset);
    pool.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cfg.subset_size));
  } else {
    pool.resize(raw.count);
    for (std::size_t i = 0; i < raw.count; ++i) pool[i] = i;
  }

  SplitIndices local = split(pool.size(), cfg.fractions, cfg.seed);
  BiasedDataset out;
  out.manifest.seed = cfg.seed;
  out.manifest.rho = cfg.rho;
  out.manifest.rho_test = kUnbiasedRho;
  out.manifest.background_threshold = cfg.background_threshold;
  out.manifest.downscale_factor = cfg.downscale_factor;
  out.manifest.subset_size = cfg.subset_size;
  out.manifest.fractions = cfg.fractions;
  out.manifest.palette = palette;
  for (std::size_t i : local.train) out.manifest.indices.train.push_back(pool[i]);
  for (std::size_t i : local.validation) out.manifest.indices.validation.push_back(pool[i]);
  for (std::size_t i : local.test) out.manifest.indices.test.push_back(pool[i]);

  // Color draws are keyed by the raw file-order index, so partitioning never
  // changes a sample's draw; the test stream is separate and unbiased.
  auto train_colors = assign_colors(raw.labels, cfg.rho, cfg.seed, kStreamColorTrain);
  auto test_colors = assign_colors(raw.labels, kUnbiasedRho, cfg.seed, kStreamColorTest);

  out.height = raw.rows / cfg.downscale_factor;
  out.width = raw.cols / cfg.downscale_factor;

  auto emit = [&](const std::vector<std::size_t>& indices, SplitTag tag,
                  const std::vector<int>& colors) {
    for (std::size_t i : indices) {
      SampleRecord rec;
      rec.target = raw.labels[i];
      rec.priv = colors[i];
      rec.split = tag;
      auto full = colorize_image({raw.images.data() + i * raw.rows * raw.cols,
                                  raw.rows * raw.cols},
                                 raw.rows, raw.cols, colors[i], palette,
                                 cfg.background_threshold);
      rec.image = downscale_image(full, 3, raw.rows, raw.cols, cfg.downscale_factor);
      rec.height = out.height;
      rec.width = out.width;
      out.records.push_back(std::move(rec));
    }
  };
  emit(out.manifest.indices.train, SplitTag::train, train_colors);
  emit(out.manifest.indices.validation, SplitTag::validation, train_colors);
  emit(out.manifest.indices.test, SplitTag::test, test_colors);
  return out;
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
  json palette = json::array();
  for (const auto& c : m.palette.colors) palette.push_back({c[0], c[1], c[2]});
  return json{{"format", "DISPDATA1"},
              {"seed", m.seed},
              {"rho", m.rho},
              {"rho_test", m.rho_test},
              {"background_threshold", m.background_threshold},
              {"downscale_factor", m.downscale_factor},
              {"subset_size", m.subset_size},
              {"fractions", {m.fractions[0], m.fractions[1], m.fractions[2]}},
              {"palette", palette},
              {"indices",
               {{"train", m.indices.train},
                {"validation", m.indices.validation},
                {"test", m.indices.test}}}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  if (j.value("format", "") != std::string("DISPDATA1"))
    throw DataError("dataset manifest: unknown format tag");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.rho = j.at("rho").get<double>();
  m.rho_test = j.at("rho_test").get<double>();
  m.background_threshold = j.at("background_threshold").get<std::uint8_t>();
  m.downscale_factor = j.at("downscale_factor").get<std::size_t>();
  m.subset_size = j.at("subset_size").get<std::size_t>();
  auto f = j.at("fractions");
  m.fractions = {f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()};
  auto p = j.at("palette");
  for (std::size_t i = 0; i < 10; ++i)
    m.palette.colors[i] = {p.at(i).at(0).get<double>(), p.at(i).at(1).get<double>(),
                           p.at(i).at(2).get<double>()};
  m.indices.train = j.at("indices").at("train").get<std::vector<std::size_t>>();
  m.indices.validation = j.at("indices").at("validation").get<std::vector<std::size_t>>();
  m.indices.test = j.at("indices").at("test").get<std::vector<std::size_t>>();
  return m;
}

}  // namespace

void save_dataset(const BiasedDataset& dataset, const RawMnistSet& raw,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
    os << manifest_to_json(dataset.manifest).dump(2) << "\n";
  }

  // Per-sample blob: original grayscale plus (t, p, split); pixels are
  // regenerated deterministically on load.
  std::ofstream os(dir / "samples.bin", std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "samples.bin").string());
  os.write("DISPDATA1", 9);
  auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  const auto& idx = dataset.manifest.indices;
  std::vector<std::pair<const std::vector<std::size_t>*, SplitTag>> groups = {
      {&idx.train, SplitTag::train},
      {&idx.validation, SplitTag::validation},
      {&idx.test, SplitTag::test}};
  put32(static_cast<std::uint32_t>(idx.train.size() + idx.validation.size() + idx.test.size()));
  put32(static_cast<std::uint32_t>(raw.rows));
  put32(static_cast<std::uint32_t>(raw.cols));
  std::size_t rec_i = 0;
  for (auto& [indices, tag] : groups) {
    for (std::size_t i : *indices) {
      const SampleRecord& rec = dataset.records.at(rec_i++);
      std::uint8_t head[3] = {static_cast<std::uint8_t>(rec.target),
                              static_cast<std::uint8_t>(rec.priv),
                              static_cast<std::uint8_t>(tag)};
      os.write(reinterpret_cast<const char*>(head), 3);
      os.write(reinterpret_cast<const char*>(raw.images.data() + i * raw.rows * raw.cols),
               static_cast<std::streamsize>(raw.rows * raw.cols));
    }
  }
  if (!os) throw DataError("dataset: write failed under " + dir.string());
}

BiasedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw DataError("missing dataset manifest: " + (dir / "manifest.json").string());
  json j = json::parse(ms, nullptr, true);
  BiasedDataset out;
  out.manifest = manifest_from_json(j);

  std::ifstream is(dir / "samples.bin", std::ios::binary);
  if (!is) throw DataError("missing dataset blob: " + (dir / "samples.bin").string());
  char magic[9];
  is.read(magic, 9);
  if (!is || std::memcmp(magic, "DISPDATA1", 9) != 0)
    throw DataError("dataset blob: bad magic");
  auto get32 = [&]() {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  std::size_t count = get32(), rows = get32(), cols = get32();
  out.height = rows / out.manifest.downscale_factor;
  out.width = cols / out.manifest.downscale_factor;

  std::vector<std::uint8_t> gray(rows * cols);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t head[3];
    is.read(reinterpret_cast<char*>(head), 3);
    is.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!is) throw DataError("dataset blob: truncated at record " + std::to_string(i));
    SampleRecord rec;
    rec.target = head[0];
    rec.priv = head[1];
    rec.split = static_cast<SplitTag>(head[2]);
    auto full = colorize_image(gray, rows, cols, rec.priv, out.manifest.palette,
                               out.manifest.background_threshold);
    rec.image = downscale_image(full, 3, rows, cols, out.manifest.downscale_factor);
    rec.height = out.height;
    rec.width = out.width;
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace disp
