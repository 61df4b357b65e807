// semfuse_make_weights: writes a reproducible He-normal VGG19 checkpoint.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "semfuse/backbone.hpp"
#include "semfuse/error.hpp"
#include "semfuse/safetensors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write synthetic VGG19 weights (no semantic meaning) in safetensors format", "semfuse_make_weights"};
  std::uint64_t seed = 0;
  std::string output;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_option("--output", output, "safetensors file")->required();
  CLI11_PARSE(app, argc, argv);
  try {
    const std::string name = "synthetic-he-normal-seed-" + std::to_string(seed);
    semfuse::write_safetensors(output, semfuse::synthetic_vgg19_weights(seed), {{"checkpoint", name}});
    std::cout << name << " -> " << output << '\n';
  } catch (const semfuse::Error& e) {
    std::cerr << "semfuse_make_weights: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
