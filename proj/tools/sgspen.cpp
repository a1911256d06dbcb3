// sgspen: data generation, training, evaluation and sweeps for energy-based
// structured prediction trained from reward feedback.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sgspen/experiment.hpp"

namespace ex = sgspen::experiment;

namespace {

struct CommonOptions {
  std::string config_file;
  std::string manifest;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool allow_manifest) {
  cmd->add_option("-c,--config", o.config_file, "flat key = value config file");
  if (allow_manifest) cmd->add_option("-m,--manifest", o.manifest, "take the config from a run manifest");
  cmd->add_option("-s,--set", o.overrides, "override a key: section.key=value (repeatable)");
  cmd->add_option("-o,--out", o.out, "output directory (sets output.dir)");
}

ex::Config resolve(const CommonOptions& o) {
  if (!o.config_file.empty() && !o.manifest.empty())
    throw sgspen::ConfigError("give either --config or --manifest, not both");
  ex::Config c = !o.manifest.empty()      ? ex::Config::from_manifest(o.manifest)
                 : !o.config_file.empty() ? ex::Config::from_file(o.config_file)
                                          : ex::Config{};
  for (const auto& kv : o.overrides) c.set_assignment(kv);
  if (!o.out.empty()) c.set("output.dir", o.out);
  return c;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    const auto b = item.find_last_not_of(' ');
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate energy networks from reward feedback."};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, sweep_opts;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "generate a dataset and write its split files");
  add_common(gen, gen_opts, false);

  auto* tr = app.add_subcommand("train", "train a model and write metrics, constraints and checkpoints");
  add_common(tr, train_opts, true);
  tr->add_flag("-q,--quiet", quiet, "no per-epoch log lines");

  std::string checkpoint, split = "test";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, or beam search with train.algorithm=beam");
  add_common(ev, eval_opts, true);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--split", split, "data split to evaluate")->capture_default_str();

  std::string sweep_key, sweep_values;
  auto* sw = app.add_subcommand("sweep", "one training run per value of a config key");
  add_common(sw, sweep_opts, false);
  sw->add_option("--key", sweep_key, "config key to vary")->required();
  sw->add_option("--values", sweep_values, "comma-separated values")->required();
  sw->add_flag("-q,--quiet", quiet, "no per-epoch log lines");

  std::string target;
  auto* in = app.add_subcommand("inspect", "summarize a run directory or manifest");
  in->add_option("path", target, "run directory or manifest.json")->required();

  auto* keys = app.add_subcommand("keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      const auto r = ex::run_gen_data(resolve(gen_opts));
      std::cout << "wrote " << r.data.files.size() << " files to " << r.dir.string() << '\n';
      for (const auto& s : r.data.split_order) std::cout << "  " << s << ": " << r.data.split(s).size() << '\n';
    } else if (tr->parsed()) {
      std::ostream* log = quiet ? nullptr : &std::cout;
      const auto r = train_opts.manifest.empty()
                         ? ex::run_train(resolve(train_opts), log)
                         : ex::rerun_from_manifest(train_opts.manifest,
                                                   train_opts.out.empty() ? std::nullopt
                                                                          : std::optional<ex::fs::path>(train_opts.out),
                                                   log);
      std::cout << "run written to " << r.dir.string() << " (" << r.seconds << " s)\n";
    } else if (ev->parsed()) {
      const auto c = resolve(eval_opts);
      const auto rep =
          ex::run_eval(c, checkpoint.empty() ? std::nullopt : std::optional<ex::fs::path>(checkpoint), split);
      const ex::fs::path out = eval_opts.out.empty() ? ex::fs::path(c.str("output.dir")) : ex::fs::path(eval_opts.out);
      ex::write_eval(rep, out);
      std::cout << rep.method << " on " << rep.split << " (" << rep.rows.size() << " examples): reward "
                << rep.mean_reward << ", metric " << rep.mean_metric << ", " << rep.mean_seconds
                << " s/example\n";
    } else if (sw->parsed()) {
      const auto rows = ex::run_sweep(resolve(sweep_opts), sweep_key, split_values(sweep_values),
                                      quiet ? nullptr : &std::cout);
      for (const auto& r : rows)
        std::cout << sweep_key << " = " << r.value << ": final train " << r.final_train_reward << ", final eval "
                  << r.final_eval_reward << '\n';
    } else if (in->parsed()) {
      ex::inspect(target, std::cout);
    } else if (keys->parsed()) {
      for (const auto& [k, spec] : ex::known_keys())
        std::cout << k << " = " << spec.def << (spec.help.empty() ? "" : "    # " + spec.help) << '\n';
    }
  } catch (const sgspen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const sgspen::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const sgspen::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const ex::fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ex::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
