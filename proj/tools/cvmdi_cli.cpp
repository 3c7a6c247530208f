// Command-line front-end: rates, security thresholds, parameter-plane scans,
// and protocol simulation with reproducible CSV/JSON outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cvmdi/attack.hpp"
#include "cvmdi/montecarlo.hpp"
#include "cvmdi/rate.hpp"
#include "cvmdi/threshold.hpp"
#include "cvmdi/version.hpp"

namespace {

using nlohmann::json;

/// Link strength given as bare transmissivity, "<x>km", or "<x>dB".
double parse_transmissivity(const std::string& text, double loss_rate) {
  std::string s = text;
  double scale = -1.0;  // -1: bare tau, 0: dB, 1: km
  if (s.size() > 2 && (s.substr(s.size() - 2) == "km" || s.substr(s.size() - 2) == "Km")) {
    scale = 1.0;
    s = s.substr(0, s.size() - 2);
  } else if (s.size() > 2 && (s.substr(s.size() - 2) == "dB" || s.substr(s.size() - 2) == "db")) {
    scale = 0.0;
    s = s.substr(0, s.size() - 2);
  }
  std::size_t used = 0;
  const double value = std::stod(s, &used);
  if (used != s.size()) throw cvmdi::infeasible_error("cannot parse link value: " + text);
  if (scale == 1.0) return cvmdi::tau_from_distance(value, loss_rate);
  if (scale == 0.0) return std::pow(10.0, -value / 10.0);
  if (!(value > 0.0 && value <= 1.0)) {
    throw cvmdi::infeasible_error("transmissivity out of (0, 1]: " + text);
  }
  return value;
}

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative() && p.parent_path().empty()) {
    if (const char* dir = std::getenv("CVMDI_OUTPUT_DIR")) {
      return std::filesystem::path(dir) / p;
    }
  }
  return p;
}

void emit(const std::string& payload, const std::string& output) {
  if (output.empty()) {
    std::cout << payload;
    return;
  }
  const auto path = resolve_output(output);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path.string());
  out << payload;
}

std::string csv_header(const json& config) {
  std::ostringstream out;
  out << "# cvmdi " << cvmdi::kVersion << "\n";
  for (auto it = config.begin(); it != config.end(); ++it) {
    out << "# " << it.key() << "=" << it.value().dump() << "\n";
  }
  return out.str();
}

json wrap(const json& config, const json& result) {
  return json{{"version", cvmdi::kVersion}, {"config", config}, {"result", result}};
}

std::string fixed17(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

// ---------------------------------------------------------------------------

struct RateArgs {
  std::string link_a, link_b;
  double loss_rate = cvmdi::kDefaultLossDbPerKm;
  std::optional<double> omega_a, omega_b;
  double g = 0.0, g_prime = 0.0;
  std::optional<double> chi, epsilon;
  double xi = 0.97;
  std::optional<double> mu;
  bool asymptotic = false;
  std::string format = "text", output;
};

int run_rate(const RateArgs& args) {
  const double tau_a = parse_transmissivity(args.link_a, args.loss_rate);
  const double tau_b = parse_transmissivity(args.link_b, args.loss_rate);

  const bool has_attack = args.omega_a.has_value() || args.omega_b.has_value();
  const bool has_noise = args.chi.has_value() || args.epsilon.has_value();
  if (has_attack && has_noise) {
    throw cvmdi::infeasible_error(
        "give either attack parameters (--omega-a/--omega-b/--g/--g-prime) or a "
        "noise level (--chi/--epsilon), not both");
  }
  if (args.chi && args.epsilon) {
    throw cvmdi::infeasible_error("--chi and --epsilon are mutually exclusive");
  }

  // xi < 1 only makes sense at finite modulation.
  std::optional<double> mu = args.mu;
  if (!mu && !args.asymptotic && args.xi < 1.0) mu = cvmdi::kDefaultMu;
  if (args.asymptotic && args.xi < 1.0) {
    throw cvmdi::infeasible_error("asymptotic rate requires --xi 1");
  }

  json config{{"tau_a", tau_a},       {"tau_b", tau_b}, {"xi", args.xi},
              {"loss_rate", args.loss_rate}};
  cvmdi::RateResult result;
  if (has_attack) {
    cvmdi::AttackParams p{tau_a, tau_b, args.omega_a.value_or(1.0),
                          args.omega_b.value_or(1.0), args.g, args.g_prime};
    config["omega_a"] = p.omega_a;
    config["omega_b"] = p.omega_b;
    config["g"] = p.g;
    config["g_prime"] = p.g_prime;
    result = cvmdi::rate_general(p, mu, args.xi);
  } else {
    const double loss = cvmdi::chi_loss(tau_a, tau_b);
    const double chi = args.chi ? *args.chi : loss + args.epsilon.value_or(0.0);
    config["chi"] = chi;
    config["epsilon"] = chi - loss;
    result = mu ? cvmdi::rate_fixed_chi_finite(tau_a, tau_b, chi, *mu, args.xi)
                : cvmdi::rate_min_fixed_chi(tau_a, tau_b, chi);
  }
  config["mode"] = mu ? "finite-mu" : "asymptotic";
  if (mu) config["mu"] = *mu;

  if (args.format == "json") {
    json r{{"rate", result.rate}, {"chi", result.chi}, {"epsilon", result.epsilon},
           {"xi", result.xi}};
    if (result.i_ab) r["i_ab"] = *result.i_ab;
    if (result.i_e) r["i_e"] = *result.i_e;
    emit(wrap(config, r).dump(2) + "\n", args.output);
  } else if (args.format == "csv") {
    std::ostringstream out;
    out << csv_header(config) << "i_ab,i_e,rate,xi,chi,epsilon\n"
        << (result.i_ab ? fixed17(*result.i_ab) : "") << ','
        << (result.i_e ? fixed17(*result.i_e) : "") << ',' << fixed17(result.rate)
        << ',' << fixed17(result.xi) << ',' << fixed17(result.chi) << ','
        << fixed17(result.epsilon) << '\n';
    emit(out.str(), args.output);
  } else {
    std::ostringstream out;
    out.precision(10);
    out << "mode      : " << (mu ? "finite-mu (mu = " + fixed17(*mu) + ")" : "asymptotic")
        << "\n";
    out << "tau_a     : " << tau_a << "\ntau_b     : " << tau_b << "\n";
    if (result.i_ab) out << "I_AB      : " << *result.i_ab << " bits/use\n";
    if (result.i_e) out << "I_E       : " << *result.i_e << " bits/use\n";
    out << "rate      : " << result.rate << " bits/use\n";
    out << "chi       : " << result.chi << "  (chi_loss = "
        << cvmdi::chi_loss(tau_a, tau_b) << ", epsilon = " << result.epsilon << ")\n";
    emit(out.str(), args.output);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ThresholdArgs {
  std::vector<double> r_values;
  double r_min = 0.01, r_max = 5.0;
  int r_steps = 0;
  double epsilon = 0.0;
  double loss_rate = cvmdi::kDefaultLossDbPerKm;
  double cap_km = 500.0;
  std::string format = "csv", output;
};

int run_threshold(const ThresholdArgs& args) {
  std::vector<double> radii = args.r_values;
  if (args.r_steps > 0) {
    radii.clear();
    for (int i = 0; i < args.r_steps; ++i) {
      radii.push_back(args.r_min +
                      (args.r_max - args.r_min) * i / std::max(1, args.r_steps - 1));
    }
  }
  if (radii.empty()) throw cvmdi::infeasible_error("no relay radii given (--r or --r-steps)");

  cvmdi::ThresholdOptions opts;
  opts.cap_km = args.cap_km;
  const cvmdi::ThresholdCurve curve =
      cvmdi::threshold_curve(radii, args.epsilon, args.loss_rate, opts);

  json config{{"epsilon", args.epsilon},
              {"loss_rate", args.loss_rate},
              {"cap_km", args.cap_km},
              {"r_km", radii}};
  if (args.format == "json") {
    emit(wrap(config, json::parse(cvmdi::to_json(curve))).dump(2) + "\n", args.output);
  } else {
    emit(csv_header(config) + cvmdi::to_csv(curve), args.output);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ScanArgs {
  std::string plane = "correlation";
  double omega_a = 2.0, omega_b = 2.0;
  int grid_n = 101;
  std::optional<std::string> link_a, link_b;
  double epsilon = 0.0;
  double tau_min = 0.05, tau_max = 1.0;
  double loss_rate = cvmdi::kDefaultLossDbPerKm;
  std::string format = "csv", output;
};

int run_scan(const ScanArgs& args) {
  if (args.plane == "correlation") {
    const cvmdi::CorrelationPlaneScan scan =
        cvmdi::scan_correlation_plane(args.omega_a, args.omega_b, args.grid_n);
    json config{{"plane", "correlation"},
                {"omega_a", args.omega_a},
                {"omega_b", args.omega_b},
                {"grid_n", args.grid_n}};
    // With transmissivities given, add iso-rate / iso-noise columns.
    if (args.link_a && args.link_b) {
      const double tau_a = parse_transmissivity(*args.link_a, args.loss_rate);
      const double tau_b = parse_transmissivity(*args.link_b, args.loss_rate);
      config["tau_a"] = tau_a;
      config["tau_b"] = tau_b;
      std::ostringstream out;
      out.precision(17);
      out << csv_header(config) << "g,g_prime,class,rate,chi\n";
      json rows = json::array();
      for (const auto& pt : scan.points) {
        std::string rate_s, chi_s;
        json row{{"g", pt.g}, {"g_prime", pt.g_prime}, {"class", to_string(pt.cls)}};
        if (pt.cls != cvmdi::AttackClass::Unphysical) {
          const cvmdi::AttackParams p{tau_a, tau_b, args.omega_a, args.omega_b,
                                      pt.g, pt.g_prime};
          const cvmdi::RateResult r = cvmdi::rate_general(p);
          rate_s = fixed17(r.rate);
          chi_s = fixed17(r.chi);
          row["rate"] = r.rate;
          row["chi"] = r.chi;
        }
        out << pt.g << ',' << pt.g_prime << ',' << to_string(pt.cls) << ','
            << rate_s << ',' << chi_s << '\n';
        rows.push_back(row);
      }
      if (args.format == "json") {
        emit(wrap(config, json{{"points", rows}}).dump(2) + "\n", args.output);
      } else {
        emit(out.str(), args.output);
      }
      return 0;
    }
    if (args.format == "json") {
      emit(wrap(config, json::parse(cvmdi::to_json(scan))).dump(2) + "\n", args.output);
    } else {
      emit(csv_header(config) + cvmdi::to_csv(scan), args.output);
    }
    return 0;
  }
  if (args.plane == "transmissivity") {
    std::vector<double> grid;
    for (int i = 0; i < args.grid_n; ++i) {
      grid.push_back(args.tau_min +
                     (args.tau_max - args.tau_min) * i / std::max(1, args.grid_n - 1));
    }
    const cvmdi::RateSurface surface = cvmdi::rate_surface(grid, grid, args.epsilon);
    json config{{"plane", "transmissivity"},
                {"epsilon", args.epsilon},
                {"grid_n", args.grid_n},
                {"tau_min", args.tau_min},
                {"tau_max", args.tau_max}};
    if (args.format == "json") {
      emit(wrap(config, json::parse(cvmdi::to_json(surface))).dump(2) + "\n",
           args.output);
    } else {
      emit(csv_header(config) + cvmdi::to_csv(surface), args.output);
    }
    return 0;
  }
  throw cvmdi::infeasible_error("unknown plane: " + args.plane +
                                " (expected correlation | transmissivity)");
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  cvmdi::SimConfig config;
  cvmdi::RelaySettings relay;
  std::string channel_mode = "attenuation";
  bool optimize_relay = false;
  bool no_convergence = false;
  std::string dump_samples, output;
};

int run_simulate(SimulateArgs& args) {
  if (args.channel_mode == "beamsplitter") {
    args.config.channel_mode = cvmdi::ChannelMode::BeamSplitter;
  } else if (args.channel_mode != "attenuation") {
    throw cvmdi::infeasible_error("unknown channel mode: " + args.channel_mode);
  }

  std::optional<cvmdi::ROptimum> tuned;
  if (args.optimize_relay) {
    tuned = cvmdi::optimize_r(args.config, args.relay, /*model=*/false);
    args.relay.r = tuned->r_opt;
  }

  const cvmdi::EstimationReport report = cvmdi::run_simulation_report(
      args.config, args.relay, {}, !args.no_convergence);

  json out = json::parse(cvmdi::to_json(report, args.config, args.relay));
  out["version"] = cvmdi::kVersion;
  if (tuned) {
    out["r_optimization"] = {{"r_opt", tuned->r_opt},
                             {"rate_opt", tuned->rate_opt},
                             {"evaluations", tuned->evaluations}};
  }
  emit(out.dump(2) + "\n", args.output);

  if (!args.dump_samples.empty()) {
    emit(cvmdi::to_csv(cvmdi::simulate(args.config, args.relay)), args.dump_samples);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-rate toolkit for the measurement-device-independent "
               "continuous-variable protocol with an untrusted Bell relay"};
  app.set_version_flag("--version", cvmdi::kVersion);
  app.set_config("--config")->configurable(false);
  app.require_subcommand(1);
  app.fallthrough();

  RateArgs rate_args;
  auto* rate = app.add_subcommand("rate", "Secret-key rate for one configuration");
  rate->add_option("--tau-a", rate_args.link_a,
                   "Alice link: transmissivity, '<x>km', or '<x>dB'")->required();
  rate->add_option("--tau-b", rate_args.link_b, "Bob link (same units)")->required();
  rate->add_option("--loss-rate", rate_args.loss_rate, "Fibre loss, dB/km");
  rate->add_option("--omega-a", rate_args.omega_a, "Thermal variance, Alice link");
  rate->add_option("--omega-b", rate_args.omega_b, "Thermal variance, Bob link");
  rate->add_option("--g", rate_args.g, "Reservoir q correlation");
  rate->add_option("--g-prime", rate_args.g_prime, "Reservoir p correlation");
  rate->add_option("--chi", rate_args.chi, "Equivalent noise (vacuum units)");
  rate->add_option("--epsilon", rate_args.epsilon, "Excess noise above chi_loss");
  rate->add_option("--xi", rate_args.xi, "Reconciliation efficiency (default 0.97)");
  rate->add_option("--mu", rate_args.mu, "Finite modulation mu = phi + 1");
  rate->add_flag("--asymptotic", rate_args.asymptotic, "Force the large-mu formulas");
  rate->add_option("--format", rate_args.format, "text | json | csv");
  rate->add_option("--output", rate_args.output, "Output file (default stdout)");

  ThresholdArgs thr_args;
  auto* thr = app.add_subcommand("threshold", "Maximum Bob distance vs relay radius");
  thr->add_option("--r", thr_args.r_values, "Relay radii in km")->delimiter(',');
  thr->add_option("--r-min", thr_args.r_min, "Radius sweep start, km");
  thr->add_option("--r-max", thr_args.r_max, "Radius sweep end, km");
  thr->add_option("--r-steps", thr_args.r_steps, "Radius sweep point count");
  thr->add_option("--epsilon", thr_args.epsilon, "Excess noise");
  thr->add_option("--loss-rate", thr_args.loss_rate, "Fibre loss, dB/km");
  thr->add_option("--cap", thr_args.cap_km, "Search cap, km");
  thr->add_option("--format", thr_args.format, "csv | json");
  thr->add_option("--output", thr_args.output, "Output file (default stdout)");

  ScanArgs scan_args;
  auto* scan = app.add_subcommand("scan", "Correlation-plane or transmissivity-plane scan");
  scan->add_option("--plane", scan_args.plane, "correlation | transmissivity");
  scan->add_option("--omega-a", scan_args.omega_a, "Thermal variance, Alice link");
  scan->add_option("--omega-b", scan_args.omega_b, "Thermal variance, Bob link");
  scan->add_option("--grid-n", scan_args.grid_n, "Grid points per axis");
  scan->add_option("--tau-a", scan_args.link_a,
                   "Adds rate/chi columns to the correlation scan");
  scan->add_option("--tau-b", scan_args.link_b, "See --tau-a");
  scan->add_option("--epsilon", scan_args.epsilon, "Excess noise (transmissivity plane)");
  scan->add_option("--tau-min", scan_args.tau_min, "Transmissivity grid start");
  scan->add_option("--tau-max", scan_args.tau_max, "Transmissivity grid end");
  scan->add_option("--loss-rate", scan_args.loss_rate, "Fibre loss, dB/km");
  scan->add_option("--format", scan_args.format, "csv | json");
  scan->add_option("--output", scan_args.output, "Output file (default stdout)");

  ScanArgs region_args;
  auto* region = app.add_subcommand("attack-region", "Bona-fide correlation-plane map");
  region->add_option("--omega-a", region_args.omega_a, "Thermal variance, Alice link")
      ->required();
  region->add_option("--omega-b", region_args.omega_b, "Thermal variance, Bob link")
      ->required();
  region->add_option("--grid-n", region_args.grid_n, "Grid points per axis");
  region->add_option("--format", region_args.format, "csv | json");
  region->add_option("--output", region_args.output, "Output file (default stdout)");

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "Protocol rounds + estimation pipeline");
  sim->add_option("--phi", sim_args.config.phi, "Modulation variance (default 65)");
  sim->add_option("--tau-b", sim_args.config.tau_b, "Bob-link equivalent transmissivity");
  sim->add_option("--n-rounds", sim_args.config.n_rounds, "Sample count");
  sim->add_option("--seed", sim_args.config.seed, "RNG seed");
  sim->add_option("--xi", sim_args.config.xi, "Reconciliation efficiency");
  sim->add_option("--excess-noise", sim_args.config.excess_noise,
                  "Injected excess noise epsilon");
  sim->add_option("--r", sim_args.relay.r, "Relay rescale parameter");
  sim->add_option("--detection-noise", sim_args.relay.detection_noise_variance,
                  "Relay detection noise variance (vacuum = 1)");
  sim->add_option("--channel-mode", sim_args.channel_mode,
                  "attenuation | beamsplitter");
  sim->add_flag("--optimize-r", sim_args.optimize_relay,
                "Golden-section search for the best r before the final run");
  sim->add_flag("--no-convergence", sim_args.no_convergence,
                "Skip the finite-size convergence series");
  sim->add_option("--dump-samples", sim_args.dump_samples, "Write per-round CSV here");
  sim->add_option("--output", sim_args.output, "Report file (default stdout)");

  try {
    app.parse(argc, argv);
    if (rate->parsed()) return run_rate(rate_args);
    if (thr->parsed()) return run_threshold(thr_args);
    if (scan->parsed()) return run_scan(scan_args);
    if (region->parsed()) {
      region_args.plane = "correlation";
      region_args.link_a.reset();
      region_args.link_b.reset();
      return run_scan(region_args);
    }
    if (sim->parsed()) return run_simulate(sim_args);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const cvmdi::infeasible_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
