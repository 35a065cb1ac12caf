// primed: command-line front end. Exit codes: 0 success, 1 configuration
// error, 2 runtime failure.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "primed/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

int report_rows(const primed::CompareResult& r) {
  for (const auto& row : r.rows) {
    if (!row.ok) std::cerr << "primed: " << primed::to_string(row.method) << " failed: " << row.error << "\n";
  }
  return r.ok() ? kOk : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PriMeD: confounder-aware, fairness-evaluated risk prediction"};
  app.require_subcommand(1);

  std::string config_path, output, checkpoint, checkpoint_dir;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset described by [synth]");
  synth->add_option("-c,--config", config_path, "configuration file")->required();
  synth->add_option("-o,--out", output, "CSV to write (default <run.output>/data.csv)");

  auto* train = app.add_subcommand("train", "train stage 1 and every method, saving checkpoints");
  train->add_option("-c,--config", config_path, "configuration file")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score the test split with saved checkpoints");
  evaluate->add_option("-c,--config", config_path, "configuration file")->required();
  evaluate->add_option("--checkpoints", checkpoint_dir, "checkpoint directory (default <run.output>/checkpoints)");

  auto* compare = app.add_subcommand("compare", "train and evaluate every method on one split");
  compare->add_option("-c,--config", config_path, "configuration file")->required();

  auto* pilot = app.add_subcommand("pilot", "DNN disparity across confounding strengths");
  pilot->add_option("-c,--config", config_path, "configuration file")->required();

  auto* latent = app.add_subcommand("export-latent", "write posterior-mean confounders for every record");
  latent->add_option("-c,--config", config_path, "configuration file")->required();
  latent->add_option("--checkpoint", checkpoint, "CVAE checkpoint (default <run.output>/checkpoints/cvae.ckpt)");
  latent->add_option("-o,--out", output, "CSV to write (default <run.output>/latent.csv)");

  auto* validate = app.add_subcommand("validate", "check a configuration and print it with defaults filled");
  validate->add_option("-c,--config", config_path, "configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (validate->parsed()) {
      primed::ConfigResult r = primed::validate_config(config_path);
      if (!r.ok()) {
        for (const auto& d : r.diagnostics) std::cerr << config_path << ": " << primed::to_string(d) << "\n";
        return kConfigError;
      }
      std::cout << primed::render_config(*r.config);
      return kOk;
    }

    const primed::ExperimentConfig config = primed::load_config(config_path);
    const primed::fs::path out_dir = config.output_dir;

    if (synth->parsed()) {
      if (config.source != primed::DataSource::synth) throw primed::ConfigError("synth needs data.source = synth");
      const std::string path = output.empty() ? (out_dir / "data.csv").string() : output;
      if (primed::fs::path(path).has_parent_path()) primed::fs::create_directories(primed::fs::path(path).parent_path());
      primed::save_csv(primed::generate(config.synth).dataset, path);
      std::cout << path << "\n";
      return kOk;
    }
    if (train->parsed()) return report_rows(primed::run_train(config));
    if (compare->parsed()) {
      const auto r = primed::run_compare(config);
      std::cout << primed::results_table(r);
      return report_rows(r);
    }
    if (evaluate->parsed()) {
      const auto r = primed::run_evaluate(config, checkpoint_dir.empty() ? out_dir / "checkpoints" : primed::fs::path(checkpoint_dir));
      std::cout << primed::results_table(r);
      return report_rows(r);
    }
    if (pilot->parsed()) {
      std::cout << primed::pilot_csv(primed::run_pilot(config));
      return kOk;
    }
    if (latent->parsed()) {
      const primed::fs::path ck = checkpoint.empty() ? out_dir / "checkpoints" / "cvae.ckpt" : primed::fs::path(checkpoint);
      const primed::fs::path out = output.empty() ? out_dir / "latent.csv" : primed::fs::path(output);
      primed::export_latent(config, ck, out);
      std::cout << out.string() << "\n";
      return kOk;
    }
  } catch (const primed::ConfigError& e) {
    std::cerr << "primed: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "primed: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
