// u2k command-line front end: config-driven data generation, pretraining,
// blind adaptation, fusion, evaluation, degradation sweeps and ablations.
#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "u2k/experiment.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool no_adapt = false;
  std::string drop;
  std::string opt;
  std::string precision = "f32";
  int threads = 0;
  std::string command;
};

u2k::Experiment load(const CliOptions& cli) {
  u2k::KvConfig cfg = u2k::KvConfig::parse_file(cli.config_path);
  std::string dir = std::filesystem::path(cli.config_path).parent_path().string();
  if (dir.empty()) dir = ".";
  u2k::Experiment e = u2k::load_experiment(cfg, dir);
  if (!cli.out_dir.empty()) e.out_dir = cli.out_dir;
  if (cli.seed >= 0) {
    if (cli.command == "gen-data") e.data_seed = std::uint64_t(cli.seed);
    else if (cli.command == "pretrain") e.pretrain.seed = std::uint64_t(cli.seed);
    else e.u2k.seed = std::uint64_t(cli.seed);
  }
  if (!cli.opt.empty()) {
    if (cli.opt == "gao") e.u2k.opt = u2k::OptStrategy::Gao;
    else if (cli.opt == "ao") e.u2k.opt = u2k::OptStrategy::Ao;
    else if (cli.opt == "naive") e.u2k.opt = u2k::OptStrategy::Naive;
    else u2k::fail_config("--opt must be naive, ao or gao");
  }
  int threads = cli.threads > 0 ? cli.threads : e.threads;
  if (threads > 0) u2k::set_default_threads(threads);
  return e;
}

template <typename T>
int dispatch(const CliOptions& cli) {
  u2k::Experiment e = load(cli);
  if (cli.command == "gen-data") {
    u2k::run_gen_data(e);
  } else if (cli.command == "pretrain") {
    u2k::run_pretrain<T>(e);
  } else if (cli.command == "adapt") {
    u2k::FusionNet<T> fnet = u2k::load_fusion_net<T>(e);
    u2k::AdaptVariant v{cli.drop, e.u2k.opt, e.u2k.seed};
    u2k::run_adapt<T>(e, fnet, v);
  } else if (cli.command == "fuse") {
    u2k::run_fuse<T>(e, cli.no_adapt);
  } else if (cli.command == "eval") {
    u2k::run_eval<T>(e, cli.no_adapt);
  } else if (cli.command == "sweep") {
    u2k::run_sweep<T>(e);
  } else if (cli.command == "ablate") {
    u2k::run_ablate<T>(e, cli.drop, cli.opt);
  } else {
    u2k::fail_config("unknown command '" + cli.command + "'");
  }
  return 0;
}

int exit_code(u2k::ErrorKind kind) {
  switch (kind) {
    case u2k::ErrorKind::Config: return 2;
    case u2k::ErrorKind::Io: return 4;
    default: return 3;  // divergence and other runtime failures
  }
}

const char* kind_name(u2k::ErrorKind kind) {
  switch (kind) {
    case u2k::ErrorKind::Config: return "config";
    case u2k::ErrorKind::Io: return "io";
    case u2k::ErrorKind::Divergence: return "divergence";
    default: return "runtime";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"u2k: blind hyperspectral image fusion via unknown-to-known degradation transformation"};
  app.require_subcommand(1);

  CliOptions cli;
  const char* commands[] = {"gen-data", "pretrain", "adapt", "fuse", "eval", "sweep", "ablate"};
  const char* descriptions[] = {
      "synthesize HR-HSI cubes and write the dataset manifest",
      "train the fusion network on the known degradation",
      "learn the DW/DT modules for the unknown degradation",
      "fuse the test cubes and write result cubes + previews",
      "fuse the test cubes and write a metric report",
      "run every configured degradation cell, baseline vs U2K",
      "run the loss and optimizer ablation tables",
  };
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
    sub->add_option("--config", cli.config_path, "experiment config file")->required();
    sub->add_option("--out", cli.out_dir, "output directory (overrides out.dir)");
    sub->add_option("--seed", cli.seed, "seed override for this command");
    sub->add_option("--threads", cli.threads, "worker threads (overrides run.threads)");
    sub->add_option("--precision", cli.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    if (std::string(commands[i]) == "adapt" || std::string(commands[i]) == "ablate") {
      sub->add_option("--drop", cli.drop, "drop a loss term: rec, dt or con")
          ->check(CLI::IsMember({"rec", "dt", "con"}));
      sub->add_option("--opt", cli.opt, "optimization strategy")
          ->check(CLI::IsMember({"naive", "ao", "gao"}));
    }
    if (std::string(commands[i]) == "fuse" || std::string(commands[i]) == "eval")
      sub->add_flag("--no-adapt", cli.no_adapt, "use the unadapted baseline fusion path");
    sub->callback([&cli, name = std::string(commands[i])] { cli.command = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (cli.precision == "f64") return dispatch<double>(cli);
    return dispatch<float>(cli);
  } catch (const u2k::Error& err) {
    std::fprintf(stderr, "error kind=%s msg=\"%s\"\n", kind_name(err.kind()), err.what());
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error kind=runtime msg=\"%s\"\n", err.what());
    return 3;
  }
}
