// Synthetic dataset writer: striped-texture classes in the standard
// root/<class_name>/<images> layout.

#include <CLI11.hpp>

#include <cstdio>

#include "vdg/dataset.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a synthetic labeled image dataset"};
  std::string out;
  vdg::SynthConfig cfg;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--classes", cfg.classes);
  app.add_option("--per-class", cfg.per_class);
  app.add_option("--size", cfg.size, "square image side");
  app.add_option("--seed", cfg.seed);
  app.add_option("--noise", cfg.noise);
  app.add_option("--stripe-amp", cfg.stripe_amp);
  CLI11_PARSE(app, argc, argv);
  try {
    vdg::write_synthetic_dataset(out, cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("wrote %d classes x %d images to %s\n", cfg.classes, cfg.per_class,
              out.c_str());
  return 0;
}
