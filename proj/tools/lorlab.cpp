#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ll/cli.hpp"

int main(int argc, char** argv) {
  using namespace ll::cli;
  CLI::App app{"lorlab: scenario runner for the observation-time toolkit"};
  app.require_subcommand(1);
  std::string config, out, format = "csv";
  long long seed = -1;
  bool slow = false;
  for (const auto& name : pipelines()) {
    auto* sc = app.add_subcommand(name, "run the " + name + " pipeline");
    sc->add_option("--config", config, "scenario config (JSON)")->required()->check(CLI::ExistingFile);
    sc->add_option("--out", out, "artifact directory")->required();
    sc->add_option("--seed", seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
    sc->add_flag("--slow", slow, "allow the coarse 1+3 runs");
    sc->add_option("--format", format, "table format: csv or json");
  }
  CLI11_PARSE(app, argc, argv);
  std::string pipeline = app.get_subcommands().front()->get_name();
  try {
    auto r = run_scenario(config, out, pipeline, seed, slow, format);
    std::cout << r.report.dump(2) << "\n";
    std::cerr << "wrote " << r.dir.string() << "/manifest.json\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PipelineError& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
