#include "divbayes/divbayes.h"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string seed;
  std::string workers;
  bool strict_paper = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config,-c", o.config, "key = value configuration file");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_option("--out,-o", o.out, "output directory");
  sub->add_option("--workers", o.workers, "worker threads");
  sub->add_flag("--strict-paper", o.strict_paper, "use the alternative assignment odds and start-point momentum projection");
  sub->add_option("--set", o.sets, "override a configuration key (key=value), repeatable");
}

int report(divbayes_status s) {
  std::cerr << "error: " << divbayes_last_error() << '\n';
  return static_cast<int>(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diversity-promoting Bayesian learning"};
  app.set_version_flag("--version", std::string(divbayes_version()));
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> tasks = {
      {"train-bmem", "fit a Bayesian mixture of experts (vi, mh or pr)"},
      {"train-ilfm", "run the latent feature sampler"},
      {"eval", "evaluate a checkpoint on held-out data"},
      {"sample-prior", "draw components from the prior"},
      {"diagnose", "recompute angle diagnostics from a checkpoint"}};
  for (const auto& [name, help] : tasks) add_common(app.add_subcommand(name, help), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return DIVBAYES_ERR_CONFIG;
  }
  const std::string task = app.get_subcommands().front()->get_name();

  divbayes_config* cfg = nullptr;
  divbayes_status s = o.config.empty() ? divbayes_config_new(&cfg) : divbayes_config_load(o.config.c_str(), &cfg);
  if (s != DIVBAYES_OK) return report(s);
  const auto set = [&](const std::string& k, const std::string& v) {
    if (s == DIVBAYES_OK) s = divbayes_config_set(cfg, k.c_str(), v.c_str());
  };
  set("task", task);
  if (task == "train-ilfm") {
    char buf[64];
    size_t need = 0;
    if (divbayes_config_get(cfg, "algorithm", buf, sizeof buf, &need) == DIVBAYES_OK && buf[0] == '\0')
      set("algorithm", "gibbs");
  }
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      divbayes_config_free(cfg);
      return DIVBAYES_ERR_CONFIG;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.seed.empty()) set("seed", o.seed);
  if (!o.out.empty()) set("out", o.out);
  if (!o.workers.empty()) set("workers", o.workers);
  if (o.strict_paper) set("strict_paper", "true");
  if (s != DIVBAYES_OK) {
    divbayes_config_free(cfg);
    return report(s);
  }

  const int code = divbayes_run(cfg);
  divbayes_config_free(cfg);
  std::cout << divbayes_last_summary();
  if (code != 0) std::cerr << "error: " << divbayes_last_error() << '\n';
  return code;
}
