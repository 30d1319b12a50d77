#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dsse/distributions.hpp"
#include "dsse/estimator.hpp"
#include "dsse/harness.hpp"
#include "dsse/netmodel.hpp"
#include "dsse/powerflow.hpp"

using namespace dsse;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

// Accepts either a file path or inline JSON.
nlohmann::json json_arg(const std::string& arg) {
  if (!arg.empty() && (arg.front() == '{' || arg.front() == '[')) {
    try {
      return nlohmann::json::parse(arg);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("inline JSON: ") + e.what());
    }
  }
  return read_json(arg);
}

void emit(const nlohmann::json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out);
  if (!f) throw std::invalid_argument("cannot write " + out);
  f << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood state estimation for unbalanced distribution networks"};
  app.require_subcommand(1);

  std::string network, setpoints, measurements, config, out, model, summary;
  std::vector<std::size_t> components;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  bool quiet = false;

  auto* pf_cmd = app.add_subcommand("pf", "Solve a power flow");
  pf_cmd->add_option("--network", network, "Network JSON")->required()->check(CLI::ExistingFile);
  pf_cmd->add_option("--setpoints", setpoints, "Device setpoint JSON (default: device profiles)")
      ->check(CLI::ExistingFile);
  pf_cmd->add_option("--out", out, "Output file (default: stdout)");

  auto* se_cmd = app.add_subcommand("se", "Run a state estimation");
  se_cmd->add_option("--network", network, "Network JSON")->required()->check(CLI::ExistingFile);
  se_cmd->add_option("--measurements", measurements, "Measurement JSON")->required()->check(CLI::ExistingFile);
  se_cmd->add_option("--config", config, "Estimator config JSON")->check(CLI::ExistingFile);
  se_cmd->add_option("--out", out, "Output file (default: stdout)");

  auto* mc_cmd = app.add_subcommand("mc", "Run a Monte-Carlo sweep");
  auto* seed_opt = mc_cmd->add_option("--seed", seed, "Master seed (overrides the config)");
  mc_cmd->add_option("--config", config, "Scenario config JSON")->required()->check(CLI::ExistingFile);
  mc_cmd->add_option("--out", out, "Run records CSV")->required();
  mc_cmd->add_option("--workers", workers, "Worker threads (0 = all cores)")->capture_default_str();
  mc_cmd->add_option("--summary", summary, "Summary JSON (default: stdout)");
  mc_cmd->add_flag("--quiet", quiet, "No progress output");

  auto* dist_cmd = app.add_subcommand("dist", "Gaussian approximations of a distribution");
  dist_cmd->require_subcommand(1);
  auto* ge_cmd = dist_cmd->add_subcommand("ge", "Gaussian equivalent of GMM components");
  ge_cmd->add_option("--model", model, "GMM as JSON file or inline JSON")->required();
  ge_cmd->add_option("--components", components, "Component indices (default: dominant)")->delimiter(',');
  auto* ga_cmd = dist_cmd->add_subcommand("ga", "Maximum-likelihood Gaussian fit");
  ga_cmd->add_option("--model", model, "Distribution as JSON file or inline JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pf_cmd) {
      const Network net = load_network(network);
      const pf::NetworkModel m(net);
      const pf::PFSpec spec = setpoints.empty() ? pf::profile_spec(m) : pf::spec_from_json(m, read_json(setpoints));
      const auto res = pf::solve_pf(m, spec);
      auto j = pf::state_to_json(m, res.state);
      j["iterations"] = res.report.iterations;
      j["mismatch"] = res.report.mismatch;
      emit(j, out);
    } else if (*se_cmd) {
      const Network net = load_network(network);
      const auto ms = se::measurements_from_json(read_json(measurements), net);
      const auto cfg = config.empty() ? se::EstimatorConfig{} : se::config_from_json(read_json(config));
      const auto res = se::try_estimate(net, ms, cfg);
      emit(se::result_to_json(res, net), out);
      if (res.report.status != nlp::Status::optimal) {
        std::cerr << "estimation ended with status " << nlp::to_string(res.report.status) << '\n';
        return 3;
      }
    } else if (*mc_cmd) {
      auto cfg = mc::load_scenario(config);
      if (*seed_opt) cfg.seed = seed;
      std::ofstream csv(out);
      if (!csv) throw std::invalid_argument("cannot write " + out);
      mc::Progress progress;
      if (!quiet)
        progress = [](std::size_t done, std::size_t total) {
          std::fprintf(stderr, "\r%zu/%zu scenarios", done, total);
          if (done == total) std::fputc('\n', stderr);
        };
      const auto res = mc::run_monte_carlo(cfg, workers, progress);
      mc::write_csv(csv, res.records);
      emit(mc::summary_to_json(res.summary), summary);
    } else if (*ge_cmd) {
      const auto m = dist::from_json(json_arg(model));
      const auto* gmm = std::get_if<dist::Gmm>(&m);
      if (!gmm) throw std::invalid_argument("ge needs a GMM");
      dist::check(m);
      const auto sel = components.empty() ? dist::dominant_component(*gmm) : components;
      emit(dist::to_json(dist::ge_reduce(*gmm, sel)), "");
    } else if (*ga_cmd) {
      auto m = dist::from_json(json_arg(model));
      if (auto* p = std::get_if<dist::PolynomialLogPdf>(&m); p && !p->log_normalizer) *p = dist::normalized(*p);
      dist::check(m);
      emit(dist::to_json(dist::ga_fit(m)), "");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
