// Command-line experiment runner.
//
//   puda run <config.json>
//   puda validate <config.json>
//   puda rates <config.json>
//   puda counterexample [--M 2000] [--iters 20000] [--out dir]
//
// Exit status: 0 success, 2 configuration error, 3 divergence.

#include "puda/puda.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

int report_run(const puda::ExperimentResult& result) {
  puda::write_summary_csv(std::cout, result.algorithms);
  std::cout << "wrote " << result.algorithms.size() << " trajectories to " << result.config.output_dir << '\n';
  return result.any_diverged() ? kExitDivergence : kExitOk;
}

int cmd_validate(const puda::ExperimentConfig& cfg) {
  puda::Problem p = puda::build_problem(cfg);
  puda::json out = puda::json::array();
  for (const auto& entry : cfg.algorithms) {
    auto r = puda::resolve_algorithm(entry, cfg, p);
    puda::json item = puda::rate_json(r);
    if (r.spectral) item["spectral"] = puda::spectral_json(*r.spectral);
    out.push_back(item);
  }
  std::cout << puda::json{{"graph_edges", p.graph.edges.size()},
                          {"lambda2_A", puda::second_largest_eigenvalue(p.A)},
                          {"nu", p.costs->nu()},
                          {"delta", p.costs->delta()},
                          {"algorithms", out}}
                   .dump(2)
            << '\n';
  return kExitOk;
}

int cmd_rates(const puda::ExperimentConfig& cfg) {
  puda::Problem p = puda::build_problem(cfg);
  std::cout << "algorithm,theorem,mu,mu_bound,gamma_primal,gamma_dual,gamma,feasible\n";
  for (const auto& entry : cfg.algorithms) {
    auto r = puda::resolve_algorithm(entry, cfg, p);
    std::cout << r.spec.name << ',' << (r.theorem == puda::RateTheorem::Thm1 ? "Thm1" : "Thm4") << ','
              << puda::format_number(r.spec.mu) << ',';
    if (r.rate) {
      std::cout << puda::format_number(r.rate->mu_bound) << ',' << puda::format_number(r.rate->gamma_primal) << ','
                << puda::format_number(r.rate->gamma_dual) << ',' << puda::format_number(r.rate->gamma) << ','
                << (r.rate->feasible ? "true" : "false") << '\n';
    } else {
      std::cout << "nan,nan,nan,nan,false\n";
      std::cerr << r.spec.name << ": " << r.note << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized proximal primal-dual experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run every algorithm in a config and write trajectories");
  run->add_option("config", config_path, "JSON experiment config")->required();
  auto* validate = app.add_subcommand("validate", "Report matrix assumptions and spectra without running");
  validate->add_option("config", config_path, "JSON experiment config")->required();
  auto* rates = app.add_subcommand("rates", "Print theoretical rates without running");
  rates->add_option("config", config_path, "JSON experiment config")->required();

  int M = 2000;
  long iters = 20000;
  std::string out_dir = "out/counterexample";
  auto* cex = app.add_subcommand("counterexample", "Agent-specific regularizer counterexample preset");
  cex->add_option("--M", M, "even dimension")->capture_default_str();
  cex->add_option("--iters", iters, "iterations")->capture_default_str();
  cex->add_option("--out", out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*cex) return report_run(puda::run_experiment(puda::counterexample_preset(M, iters, out_dir)));
    auto cfg = puda::parse_config(config_path);
    if (*run) return report_run(puda::run_experiment(cfg));
    if (*validate) return cmd_validate(cfg);
    if (*rates) return cmd_rates(cfg);
  } catch (const puda::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const puda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const puda::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const puda::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
