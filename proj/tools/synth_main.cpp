// Writes a synthetic dataset (frames plus manifest.csv) for trying the CLI
// without real ultrasound data.
#include <iostream>

#include "CLI11.hpp"
#include "protoshot/errors.hpp"
#include "protoshot/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic few-shot datasets"};
  protoshot::synth::DatasetSpec spec;
  std::string out;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--kind", spec.kind, "textures, planted or blobs")
      ->check(CLI::IsMember({"textures", "planted", "blobs"}));
  app.add_option("--classes", spec.classes, "Class count (2-4; planted is always 2)");
  app.add_option("--videos", spec.videos_per_class, "Videos per class");
  app.add_option("--frames", spec.frames_per_video, "Frames per video");
  app.add_option("--size", spec.size, "Image side in pixels");
  app.add_option("--linear-fraction", spec.linear_fraction, "Share of linear-probe videos");
  app.add_option("--seed", spec.seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto manifest = protoshot::synth::write_dataset(out, spec);
    std::cout << "wrote " << manifest.string() << '\n';
  } catch (const protoshot::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
