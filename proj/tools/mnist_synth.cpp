#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <string>

#include "disp/dataset.hpp"
#include "synth_digits.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic digit corpus as standard MNIST IDX files"};
  std::string out_dir = "mnist-synth";
  std::size_t count = 60000, side = 28;
  std::uint64_t seed = 9;
  std::string prefix = "train";
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--count", count, "Number of images");
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--prefix", prefix, "File prefix (train / t10k)");
  app.add_option("--side", side, "Image side length");
  CLI11_PARSE(app, argc, argv);

  disp::RawMnistSet set = disp_tools::synth_digit_corpus(count, side, seed);
  std::filesystem::create_directories(out_dir);
  auto dir = std::filesystem::path(out_dir);
  disp::write_idx_images(dir / (prefix + "-images-idx3-ubyte"), set);
  disp::write_idx_labels(dir / (prefix + "-labels-idx1-ubyte"), set);
  std::printf("wrote %zu %zux%zu images under %s\n", count, side, side, out_dir.c_str());
  return 0;
}
