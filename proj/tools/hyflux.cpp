// Command-line front end: run a configured problem, sweep step sizes, probe
// the stability limit, or inspect the element partition.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "hyflux/harness.hpp"
#include "hyflux/partition.hpp"

using namespace hyflux;

namespace {

struct GlobalArgs {
  std::string config;
  std::string output_dir;  // overrides [output] dir when given
  int threads = 0;
};

harness::RunConfig load(const GlobalArgs& g) {
  if (g.config.empty())
    throw harness::ConfigError("--config is required for this command");
  harness::RunConfig c = harness::load_config(g.config);
  if (!g.output_dir.empty()) c.out_dir = g.output_dir;
  return c;
}

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void print_partition(const harness::Problem& prob) {
  std::printf("partition: %d/%d elements implicit (IF = %.3f), %zu interface faces\n",
              prob.part.n_implicit, prob.m.n_elems(),
              prob.part.implicit_fraction(),
              prob.part.interface_faces.size());
}

int cmd_run(const GlobalArgs& g) {
  harness::RunConfig c = load(g);
  harness::Problem prob;
  harness::build_problem(c, prob);
  std::printf("mesh: %d elements, p = %d, scheme = %s, tableau = %s\n",
              prob.m.n_elems(), c.p, c.scheme.c_str(), prob.pair.name.c_str());
  print_partition(prob);
  harness::RunResult r = harness::run(prob, c);
  std::printf("advanced %ld steps to t = %g\n", r.steps, r.t);
  if (!r.l2.empty()) {
    std::printf("L2 error:");
    for (double e : r.l2) std::printf(" %.6e", e);
    std::printf("\n");
  }
  std::printf("newton iterations: %d, gmres iterations: %d\n", r.newton_iters,
              r.gmres_iters);
  const harness::TimingReport& tr = r.timing;
  std::printf("timing [s]: t_G %.4f  t_L %.4f  t_J %.4f  t_Rim %.4f  t_Rex %.4f  wall %.4f\n",
              tr.t_g, tr.t_l, tr.t_j, tr.t_rim, tr.t_rex, tr.t_w);
  if (!c.out_dir.empty()) std::printf("output written to %s\n", c.out_dir.c_str());
  return 0;
}

int cmd_converge(const GlobalArgs& g, const std::vector<double>& dts) {
  harness::RunConfig c = load(g);
  auto rows = harness::convergence_study(c, dts);
  std::printf("%-12s %-14s %s\n", "dt", "error", "order");
  harness::Table t;
  t.header = {"dt", "error", "order"};
  for (const auto& row : rows) {
    if (std::isnan(row.order))
      std::printf("%-12g %-14.6e %s\n", row.dt, row.err, "-");
    else
      std::printf("%-12g %-14.6e %.3f\n", row.dt, row.err, row.order);
    t.rows.push_back({row.dt, row.err, row.order});
  }
  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    harness::write_csv(t, c.out_dir + "/" + c.prefix + "_convergence.csv");
  }
  return 0;
}

int cmd_dtmax(const GlobalArgs& g, double lo, double hi, double horizon) {
  harness::RunConfig c = load(g);
  double dt = harness::dtmax_bisection(c, lo, hi, horizon);
  if (dt == hi)
    std::printf("stable over the whole bracket; dt_max >= %g (capped)\n", hi);
  else
    std::printf("dt_max = %.6e (bracket [%g, %g], horizon %g)\n", dt, lo, hi,
                horizon);
  return 0;
}

int cmd_partition(const GlobalArgs& g) {
  harness::RunConfig c = load(g);
  harness::Problem prob;
  harness::build_problem(c, prob);
  std::vector<double> es = partition::stiffness_indicator(prob.geo);
  print_partition(prob);
  auto [mn, mx] = std::minmax_element(es.begin(), es.end());
  std::printf("stiffness indicator: min %.6e, max %.6e, cutoff %.6e\n", *mn,
              *mx, c.cutoff);
  if (!c.out_dir.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::string path = c.out_dir + "/" + c.prefix + "_partition.csv";
    partition::write_report(path, es, prob.part);
    std::printf("histogram written to %s\n", path.c_str());
  }
  return 0;
}

int cmd_validate_tableau(const std::string& name) {
  imex::ButcherPair p = imex::load_tableau_pair(harness::resolve_tableau(name));
  imex::validate_pair(p);
  std::printf("%s: %d implicit stages, order %d, gamma = %.12g\n",
              p.name.c_str(), p.s, p.order, p.gamma());
  std::printf("ok\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flux reconstruction solver with a hybridized imex integrator"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config, "problem configuration file");
  app.add_option("--threads", g.threads, "OpenMP thread count")
      ->envname("HYFLUX_THREADS");
  app.add_option("--output-dir", g.output_dir,
                 "override the configured output directory");

  CLI::App* run = app.add_subcommand("run", "advance a problem to t_end");
  run->fallthrough();

  std::vector<double> dts;
  CLI::App* conv =
      app.add_subcommand("converge", "error against exact per step size");
  conv->add_option("--dt", dts, "step sizes, coarse to fine")
      ->required()
      ->expected(2, 64);
  conv->fallthrough();

  double lo = 1e-4, hi = 1.0, horizon = 1.0;
  CLI::App* dtm =
      app.add_subcommand("dtmax", "bisect the largest stable step size");
  dtm->add_option("--lo", lo, "stable lower bound")->required();
  dtm->add_option("--hi", hi, "upper bound / cap")->required();
  dtm->add_option("--horizon", horizon, "integration horizon per probe");
  dtm->fallthrough();

  CLI::App* part =
      app.add_subcommand("partition", "report the implicit element split");
  part->fallthrough();

  std::string tableau_name;
  CLI::App* val = app.add_subcommand("validate-tableau",
                                     "check a Butcher pair file and exit");
  val->add_option("name", tableau_name, "tableau name or path")->required();
  val->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  apply_threads(g.threads);
  try {
    if (run->parsed()) return cmd_run(g);
    if (conv->parsed()) return cmd_converge(g, dts);
    if (dtm->parsed()) return cmd_dtmax(g, lo, hi, horizon);
    if (part->parsed()) return cmd_partition(g);
    if (val->parsed()) return cmd_validate_tableau(tableau_name);
  } catch (const harness::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const harness::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const harness::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return 0;
}
