// qkdsim_cli: scenario-driven front end for the simulation modules.
//
// Every subcommand writes its datasets into --out. Run times go to stdout
// only, so the files themselves are byte-identical for a fixed scenario and
// seed.

#include <qkdsim/pipeline.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace qkdsim;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kInput = 2, kSecurity = 3, kReconciliation = 4 };

struct Globals {
  std::string scenario_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  bool verify = false;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

scenario::Scenario load(const Globals& g) {
  scenario::Scenario s = g.scenario_path.empty() ? scenario::Scenario{} : scenario::load_scenario(g.scenario_path);
  if (g.seed) s.seed = *g.seed;
  s.validate();
  return s;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

std::ofstream open_out(const Globals& g, const std::string& name) {
  return csv::open_output(out_path(g, name).string());
}

void write_json(const Globals& g, const std::string& name, const json& j) {
  auto f = open_out(g, name);
  f << j.dump(2) << '\n';
}

void save_scenario(const Globals& g, const scenario::Scenario& s) {
  auto f = open_out(g, "scenario.ini");
  scenario::write_scenario(f, s);
}

// Infinite significance (no off-peak counts) has no JSON number.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json ledger_json(const keys::LeakageLedger& l) {
  return {{"parity_bits_disclosed", l.parity_bits_disclosed},
          {"qber_sample_bits_disclosed", l.qber_sample_bits_disclosed},
          {"total_classical_bits_exchanged", l.total_classical_bits_exchanged}};
}

json chsh_json(const chsh::ChshReport& r) {
  return {{"E_a0_b0", r.e00}, {"E_a0_b1", r.e01}, {"E_a1_b1", r.e11}, {"E_a1_b0", r.e10},
          {"E_a0_b0_err", r.e00_err}, {"E_a0_b1_err", r.e01_err}, {"E_a1_b1_err", r.e11_err},
          {"E_a1_b0_err", r.e10_err}, {"S", r.s}, {"S_err", r.s_err}};
}

void report_time(const std::string& what, double seconds) {
  std::cout << what << "_seconds=" << seconds << '\n';
}

void report_correlator_time(const std::string& method, std::size_t bins, double seconds) {
  std::cout << json{{"method", method}, {"bins", bins}, {"elapsed_seconds", seconds}}.dump() << '\n';
}

int cmd_linkbudget(const Globals& g) {
  const auto s = load(g);
  Stopwatch t;
  const auto r = pipeline::run_linkbudget(s);
  report_time("linkbudget", t.seconds());
  save_scenario(g, s);
  json stages = json::array();
  for (const auto& st : r.stages()) stages.push_back({{"stage", st.name}, {"value", st.value}, {"unit", st.unit}});
  write_json(g, "linkbudget.json",
             {{"stages", stages},
              {"coincidence_probability", r.coincidence_probability},
              {"window_factor", r.window_factor},
              {"accidental_rate_hz", r.accidental_rate_hz},
              {"expected_qber", r.expected_qber},
              {"sifted_bits", r.sifted_bits},
              {"sample_bits", r.sample_bits}});
  auto f = open_out(g, "linkbudget.csv");
  f << "stage,value,unit\n";
  for (const auto& st : r.stages()) f << st.name << ',' << csv::format_double(st.value) << ',' << st.unit << '\n';
  return kOk;
}

int cmd_generate(const Globals& g, double duration_s) {
  const auto s = load(g);
  Stopwatch t;
  const auto streams = pipeline::generate_streams(s, duration_s > 0 ? duration_s : s.protocol.correlation_span_s);
  report_time("generate", t.seconds());
  save_scenario(g, s);
  save_timestamps(out_path(g, "timestamps_a.csv").string(), streams.a);
  save_timestamps(out_path(g, "timestamps_b.csv").string(), streams.b);
  write_json(g, "generate.json",
             {{"emitted_pairs", streams.emitted_pairs},
              {"events_a", streams.a.size()},
              {"events_b", streams.b.size()},
              {"duration_ps", streams.a.duration}});
  return kOk;
}

int cmd_correlate(const Globals& g, const std::string& path_a, const std::string& path_b,
                  std::optional<Picoseconds> bin, std::optional<Picoseconds> max_lag) {
  const auto s = load(g);
  const auto a = load_timestamps(path_a);
  const auto b = load_timestamps(path_b);
  const Picoseconds bin_ps = bin.value_or(s.protocol.bin_ps);
  // Both series share one grid starting at zero.
  TimestampStream ga = a, gb = b;
  ga.duration = gb.duration = std::max(a.duration, b.duration);
  const auto ba = coincidence::bin_timestamps(ga, bin_ps);
  const auto bb = coincidence::bin_timestamps(gb, bin_ps);
  const Picoseconds lag = max_lag.value_or(s.protocol.max_lag_ps);

  Stopwatch t_fft;
  const auto fft = coincidence::cross_correlate_fft(ba, bb, lag);
  const std::size_t bins = std::max(ba.size(), bb.size());
  report_correlator_time("fft", bins, t_fft.seconds());
  save_scenario(g, s);
  json report = {{"bins", bins},
                 {"bin_ps", bin_ps},
                 {"max_lag_ps", lag},
                 {"recovered_delay_ps", fft.recovered_delay},
                 {"peak_count", fft.peak_count},
                 {"significance", number_or_null(fft.significance)},
                 {"verified", false}};
  if (g.verify) {
    Stopwatch t_direct;
    const auto direct = coincidence::cross_correlate_direct(ba, bb, lag);
    report_correlator_time("direct", bins, t_direct.seconds());
    if (direct.histogram != fft.histogram) {
      throw Error("verification failed: FFT and direct histograms differ");
    }
    report["verified"] = true;
  }
  auto f = open_out(g, "histogram.csv");
  coincidence::write_histogram(f, fft);
  write_json(g, "correlate.json", report);
  return kOk;
}

int cmd_g2(const Globals& g) {
  const auto s = load(g);
  const auto m = s.source.model();
  Stopwatch t;
  const auto rows = pipeline::g2_curve(m, s.source.tau_span_ps, s.source.tau_step_ps);
  report_time("g2", t.seconds());
  save_scenario(g, s);
  auto f = open_out(g, "g2.csv");
  f << "tau_ps,g2\n";
  for (const auto& r : rows) f << csv::format_double(r.tau_ps) << ',' << csv::format_double(r.g2) << '\n';
  write_json(g, "g2.json",
             {{"bandwidth_hz", m.bandwidth},
              {"coherence_time_ps", m.coherence_time() * 1e12},
              {"g2_zero", source::g2(0.0, m)}});
  return kOk;
}

int cmd_chsh(const Globals& g) {
  const auto s = load(g);
  Stopwatch t;
  const auto counts = chsh::simulate_run(s.state.angles, s.state.model(), s.protocol.chsh_pairs,
                                         scenario::derive_seed(s.seed, scenario::kSeedChsh));
  const auto r = chsh::evaluate(counts);
  report_time("chsh", t.seconds());
  save_scenario(g, s);
  auto f = open_out(g, "chsh_counts.csv");
  chsh::write_counts(f, counts);
  auto j = chsh_json(r);
  j["pairs"] = s.protocol.chsh_pairs;
  j["key_setting_qber"] = chsh::qber_from_parallel(counts.at(chsh::kKeySetting, chsh::kKeySetting));
  j["violates_threshold"] = r.s > s.protocol.s_threshold;
  write_json(g, "chsh.json", j);
  return kOk;
}

void write_summary(std::ostream& out, const sidechannel::MiCurve& c) {
  out << "bin_width_ps,min_mi_bits,max_mi_bits,argmin_offset_ps,argmax_offset_ps\n";
  for (const auto& s : c.per_width) {
    out << s.bin_width << ',' << csv::format_double(s.min_bits) << ',' << csv::format_double(s.max_bits)
        << ',' << s.argmin_offset << ',' << s.argmax_offset << '\n';
  }
}

int cmd_sidechannel(const Globals& g) {
  const auto s = load(g);
  Stopwatch t;
  const auto curve = pipeline::sidechannel_curve(s, s.sidechannel.delta_t0_ps);
  report_time("sidechannel", t.seconds());
  save_scenario(g, s);
  const auto h = pipeline::detector_pair(s.sidechannel, s.sidechannel.delta_t0_ps);
  auto fc = open_out(g, "sidechannel_curve.csv");
  sidechannel::write_curve(fc, curve);
  auto fs_ = open_out(g, "sidechannel_summary.csv");
  write_summary(fs_, curve);
  auto d0 = open_out(g, "detector_0.csv");
  sidechannel::write_density(d0, h[0]);
  auto d1 = open_out(g, "detector_1.csv");
  sidechannel::write_density(d1, h[1]);
  return kOk;
}

int cmd_keygen(const Globals& g) {
  const auto s = load(g);
  Stopwatch t;
  const auto r = pipeline::run_keygen(s);
  report_time("keygen", t.seconds());
  save_scenario(g, s);
  auto ka = open_out(g, "key_alice.txt");
  keys::write_key(ka, r.alice);
  auto kb = open_out(g, "key_bob.txt");
  keys::write_key(kb, r.bob);
  auto fc = open_out(g, "chsh_counts.csv");
  chsh::write_counts(fc, r.counts);
  json passes = json::array();
  for (const auto& p : r.cascade_passes) {
    passes.push_back({{"block_size", p.block_size},
                      {"block_parities", p.block_parities},
                      {"search_parities", p.search_parities},
                      {"corrections", p.corrections}});
  }
  write_json(g, "keygen.json",
             {{"emitted_pairs", r.emitted_pairs},
              {"events_a", r.events_a},
              {"events_b", r.events_b},
              {"coarse_delay_ps", r.coarse_delay},
              {"delay_ps", r.delay},
              {"delay_significance", number_or_null(r.delay_significance)},
              {"coincidences", r.coincidences},
              {"chsh", chsh_json(r.chsh)},
              {"sifted_bits", r.sifted_bits},
              {"qber_estimate", r.qber_estimate},
              {"sifted_mismatch", r.sifted_mismatch},
              {"sample_bits", r.sample_bits},
              {"corrected_bits", r.corrected_bits},
              {"cascade_corrections", r.cascade_corrections},
              {"cascade_passes", passes},
              {"final_bits", r.alice.length()},
              {"keys_identical", r.alice.bits == r.bob.bits}});
  write_json(g, "ledger.json", ledger_json(r.ledger));
  std::cout << "S=" << r.chsh.s << " final_bits=" << r.alice.length() << '\n';
  return kOk;
}

int cmd_figure(const Globals& g, const std::string& name) {
  const auto s = load(g);
  Stopwatch t;
  if (name == "fig3") {
    auto f = open_out(g, "fig3.csv");
    f << "offset_m,p_anticorrelated,p_inverted\n";
    for (const auto& r : pipeline::figure3(s)) {
      f << csv::format_double(r.offset_m) << ',' << csv::format_double(r.p_anticorrelated) << ','
        << csv::format_double(r.p_inverted) << '\n';
    }
  } else if (name == "fig4") {
    auto f = open_out(g, "fig4_g2.csv");
    f << "bandwidth_hz,tau_ps,g2\n";
    for (const auto& r : pipeline::figure4(s)) {
      f << csv::format_double(r.bandwidth_hz) << ',' << csv::format_double(r.tau_ps) << ','
        << csv::format_double(r.g2) << '\n';
    }
    auto z = open_out(g, "fig4_g2_zero.csv");
    z << "bandwidth_hz,g2_zero\n";
    for (double bw : s.source.bandwidth_sweep_hz) {
      auto m = s.source.model();
      m.bandwidth = bw;
      z << csv::format_double(bw) << ',' << csv::format_double(source::g2(0.0, m)) << '\n';
    }
  } else if (name == "fig5") {
    const auto r = pipeline::figure5(s);
    auto f = open_out(g, "fig5_histogram.csv");
    coincidence::write_histogram(f, r);
    write_json(g, "fig5.json",
               {{"true_delay_ps", s.channel_b.delay_ps - s.channel_a.delay_ps},
                {"recovered_delay_ps", r.recovered_delay},
                {"bin_ps", r.bin_size},
                {"peak_count", r.peak_count},
                {"significance", number_or_null(r.significance)}});
  } else if (name == "fig7") {
    auto summary = open_out(g, "fig7_summary.csv");
    summary << "delta_t0_ps,bin_width_ps,min_mi_bits,max_mi_bits\n";
    for (Picoseconds dt0 : s.sidechannel.figure_delta_t0_ps) {
      const auto c = pipeline::sidechannel_curve(s, dt0);
      auto f = open_out(g, "fig7_dt0_" + std::to_string(dt0) + "ps.csv");
      sidechannel::write_curve(f, c);
      for (const auto& w : c.per_width) {
        summary << dt0 << ',' << w.bin_width << ',' << csv::format_double(w.min_bits) << ','
                << csv::format_double(w.max_bits) << '\n';
      }
    }
  } else {
    throw UsageError("unknown figure '" + name + "'; valid names: fig3, fig4, fig5, fig7");
  }
  report_time(name, t.seconds());
  save_scenario(g, s);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entanglement-based QKD link simulator"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--scenario", g.scenario_path, "Scenario file (INI sections)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed, overrides [seeds] master");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--verify", g.verify, "Cross-check the FFT correlator against the direct method");

  auto* linkbudget = app.add_subcommand("linkbudget", "Rate chain from source to final key");
  auto* generate = app.add_subcommand("generate", "Write two simulated timestamp streams");
  double gen_duration = 0.0;
  generate->add_option("--duration", gen_duration, "Seconds to simulate (default: correlation span)");
  auto* correlate = app.add_subcommand("correlate", "Cross-correlate two timestamp files");
  std::string path_a, path_b;
  std::optional<Picoseconds> bin, max_lag;
  correlate->add_option("a", path_a, "Timestamp CSV of node A")->required();
  correlate->add_option("b", path_b, "Timestamp CSV of node B")->required();
  correlate->add_option("--bin", bin, "Bin size in ps");
  correlate->add_option("--max-lag", max_lag, "Largest lag in ps");
  auto* g2 = app.add_subcommand("g2", "Second-order correlation curve of the source");
  auto* chsh_cmd = app.add_subcommand("chsh", "Simulated CHSH run");
  auto* side = app.add_subcommand("sidechannel", "Timing side-channel mutual information scan");
  auto* keygen = app.add_subcommand("keygen", "Full two-party key generation");
  auto* figure = app.add_subcommand("figure", "Data behind a figure");
  std::string fig_name;
  figure->add_option("name", fig_name, "fig3, fig4, fig5 or fig7")->required();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*linkbudget) return cmd_linkbudget(g);
    if (*generate) return cmd_generate(g, gen_duration);
    if (*correlate) return cmd_correlate(g, path_a, path_b, bin, max_lag);
    if (*g2) return cmd_g2(g);
    if (*chsh_cmd) return cmd_chsh(g);
    if (*side) return cmd_sidechannel(g);
    if (*keygen) return cmd_keygen(g);
    if (*figure) return cmd_figure(g, fig_name);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const DomainError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const SecurityAbort& e) {
    std::cerr << "security abort: " << e.what() << '\n';
    return kSecurity;
  } catch (const ReconciliationError& e) {
    std::cerr << "reconciliation failure: " << e.what() << '\n';
    return kReconciliation;
  } catch (const KeyExhaustedError& e) {
    std::cerr << "reconciliation failure: " << e.what() << '\n';
    return kReconciliation;
  } catch (const NoPeakError& e) {
    std::cerr << "reconciliation failure: " << e.what() << '\n';
    return kReconciliation;
  } catch (const InsufficientDataError& e) {
    std::cerr << "reconciliation failure: " << e.what() << '\n';
    return kReconciliation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
