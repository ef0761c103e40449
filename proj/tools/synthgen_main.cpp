#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "opera/synth.hpp"

// Writes the synthetic DROP-style corpus used by the experiments and the
// acceptance suite.
int main(int argc, char** argv) {
  CLI::App app{"synthetic discrete-reasoning corpus generator"};
  std::size_t instances = 200;
  std::uint64_t seed = 7;
  std::string out = "-";
  app.add_option("--instances", instances, "number of qa pairs");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--out", out, "output JSON path ('-' for stdout)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::string json = opera::synth::generate_drop_json({instances, seed});
    if (out == "-") {
      std::cout << json << "\n";
    } else {
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out);
      f << json << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
