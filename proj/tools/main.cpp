#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fedmoe/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "fedmoe: deterministic federated-learning simulator with per-client "
      "mixture-of-experts personalization"};

  std::string config_path;
  std::string preset_name = "desk";
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool sweep_lr = false;
  bool list_presets = false;

  app.add_option("--config", config_path,
                 "JSON experiment config (overrides the preset)");
  app.add_option("--preset", preset_name,
                 "built-in preset: desk | desk-dirichlet | paper-majority | "
                 "smoke")
      ->default_str("desk");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "master seed override")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_flag("--sweep-lr", sweep_lr,
               "run the FedAvg learning-rate sweep instead of the full grid");
  app.add_flag("--list-presets", list_presets, "list preset names and exit");

  CLI11_PARSE(app, argc, argv);

  if (list_presets) {
    for (const auto& name : fedmoe::exp::preset_names()) {
      std::cout << name << "\n";
    }
    return 0;
  }

  try {
    fedmoe::exp::ExperimentConfig config =
        config_path.empty() ? fedmoe::exp::preset(preset_name)
                            : fedmoe::exp::load_config_file(config_path);
    if (seed_set) config.master_seed = seed;
    if (!out_dir.empty()) config.output_dir = out_dir;

    if (sweep_lr) {
      auto rows = fedmoe::exp::run_sweep(config);
      std::cout << "sweep complete: " << config.output_dir
                << "/sweep_summary.csv\n";
      for (const auto& r : rows) {
        std::cout << "  lr=" << fedmoe::fmt_double(r.learning_rate) << "  "
                  << (r.diverged
                          ? std::string("diverged")
                          : "balanced_val_acc=" +
                                fedmoe::fmt_double(r.balanced_val_accuracy))
                  << (r.best ? "  <- best" : "") << "\n";
      }
      return 0;
    }

    auto records = fedmoe::exp::run_experiment(config);
    std::cout << "experiment complete: " << records.size() << " records\n"
              << "  " << config.output_dir << "/results.csv\n"
              << "  " << config.output_dir << "/summary.csv\n"
              << "  " << config.output_dir << "/manifest.json\n";
    return 0;
  } catch (const fedmoe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fedmoe::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const fedmoe::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const fedmoe::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
}
