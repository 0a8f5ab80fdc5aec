#pragma once

// Scenario files: INI-style sections of key = value pairs. Every key has a
// default; unknown sections or keys are rejected so typos cannot silently
// fall back to defaults.

#include <qkdsim/beam_optics.hpp>
#include <qkdsim/chsh.hpp>
#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>
#include <qkdsim/pair_source.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <iterator>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qkdsim::scenario {

struct LinkConfig {
  double wavelength_m = 810e-9;  // degenerate down-conversion of a 405 nm pump
  double waist_m = 0.04;
  double distance_m = 1000.0;
  double aperture_diameter_m = 0.08;
  double pointing_sigma_rad = 50e-6;
  std::size_t pointing_samples = 256;
  optics::CorrelationMode mode = optics::CorrelationMode::Inverted;
};

struct SourceConfig {
  double pair_rate_hz = 5e6;
  double bandwidth_hz = 500e6;
  double jitter_ps = 100.0;
  double coincidence_bin_ps = 1000.0;
  double scale = 1.0;
  Picoseconds time_bin_ps = 1;
  std::vector<double> bandwidth_sweep_hz{300e6, 400e6, 500e6, 600e6};
  double tau_span_ps = 3000.0;
  double tau_step_ps = 10.0;

  source::SourceModel model() const {
    source::SourceModel m;
    m.pair_rate = pair_rate_hz;
    m.bandwidth = bandwidth_hz;
    m.jitter = jitter_ps * 1e-12;
    m.coincidence_bin = coincidence_bin_ps * 1e-12;
    m.scale = scale;
    return m;
  }
};

struct ChannelConfig {
  double efficiency = 0.5;
  double background_hz = 1e4;
  Picoseconds delay_ps = 0;
};

struct ProtocolConfig {
  double duration_s = 0.1;
  double correlation_span_s = 100e-6;
  Picoseconds bin_ps = 1296;
  Picoseconds window_ps = 2592;
  Picoseconds max_lag_ps = 10'000'000;
  double qber_sample_fraction = 0.1;
  std::uint64_t security_margin_bits = 100;
  double s_threshold = 2.0;
  int cascade_passes = 4;
  double cascade_efficiency = 1.2;  ///< leak_EC / (n h(Q)) assumed by the rate chain
  std::uint64_t chsh_pairs = 100000;
};

struct StateConfig {
  double visibility = 1.0;
  double accidental_fraction = 0.0;
  bool singlet = false;
  chsh::BasisSettings angles;

  chsh::PairStateModel model() const {
    return {visibility, accidental_fraction,
            singlet ? chsh::PairState::Singlet : chsh::PairState::PhiPlus};
  }
};

struct SideChannelConfig {
  double sigma_ps = 350.0;
  Picoseconds delta_t0_ps = 350;
  std::string profile = "gaussian";  // or "tail"
  double tail_ps = 500.0;
  std::vector<Picoseconds> bin_widths_ps;
  std::vector<Picoseconds> start_offsets_ps{0};
  std::vector<Picoseconds> figure_delta_t0_ps{0, 175, 350, 700};

  SideChannelConfig() {
    for (Picoseconds w = 10; w <= 4000; w += 10) bin_widths_ps.push_back(w);
  }
};

struct Scenario {
  LinkConfig link;
  SourceConfig source;
  ChannelConfig channel_a{0.5, 1e4, 0};
  ChannelConfig channel_b{0.5, 1e4, 4'096'000};
  ProtocolConfig protocol;
  StateConfig state;
  SideChannelConfig sidechannel;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Independent stream seeds from the master seed (splitmix64 finaliser).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t {
  kSeedChannelA = 1,
  kSeedChannelB,
  kSeedQberSample,
  kSeedCascade,
  kSeedHash,
  kSeedPointing,
  kSeedChsh,
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  try {
    return csv::parse_number<T>(trim(raw), 0);
  } catch (const InputError&) {
    throw InputError("scenario: bad value '" + raw + "' for " + key);
  }
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const auto v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("scenario: bad boolean '" + raw + "' for " + key);
}

/// Comma separated values, or start:step:stop (inclusive) ranges.
template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  for (auto item : csv::split(raw)) {
    const std::string s = trim(std::string(item));
    if (s.empty()) continue;
    const auto c1 = s.find(':');
    if (c1 == std::string::npos) {
      out.push_back(parse_value<T>(key, s));
      continue;
    }
    const auto c2 = s.find(':', c1 + 1);
    if (c2 == std::string::npos) throw InputError("scenario: bad range '" + s + "' for " + key);
    const T start = parse_value<T>(key, s.substr(0, c1));
    const T step = parse_value<T>(key, s.substr(c1 + 1, c2 - c1 - 1));
    const T stop = parse_value<T>(key, s.substr(c2 + 1));
    if (!(step > 0) || stop < start) throw InputError("scenario: bad range '" + s + "' for " + key);
    const auto count = static_cast<std::size_t>((stop - start) / step);
    for (std::size_t i = 0; i <= count; ++i) out.push_back(start + static_cast<T>(i) * step);
  }
  if (out.empty()) throw InputError("scenario: empty list for " + key);
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s << ',';
    if constexpr (std::is_floating_point_v<T>) {
      s << csv::format_double(v[i]);
    } else {
      s << v[i];
    }
  }
  return s.str();
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;
using Getter = std::function<std::string()>;

struct Field {
  Setter set;
  Getter get;
};

template <class T>
Field number(T& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = parse_value<T>(k, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) {
              return csv::format_double(ref);
            } else {
              return std::to_string(ref);
            }
          }};
}

template <class T>
Field list(std::vector<T>& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = parse_list<T>(k, v); },
          [&ref] { return join(ref); }};
}

inline Field boolean(bool& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = parse_bool(k, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline Field angles(std::array<double, 3>& ref) {
  return {[&ref](const std::string& k, const std::string& v) {
            const auto vals = parse_list<double>(k, v);
            if (vals.size() != 3) throw InputError("scenario: " + k + " needs three angles");
            std::copy(vals.begin(), vals.end(), ref.begin());
          },
          [&ref] { return join(std::vector<double>(ref.begin(), ref.end())); }};
}

/// Section -> key -> field, in file order.
using Schema = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

inline Schema schema(Scenario& s) {
  auto mode = Field{[&s](const std::string& k, const std::string& v) {
                      const auto t = trim(v);
                      if (t == "inverted") {
                        s.link.mode = optics::CorrelationMode::Inverted;
                      } else if (t == "anticorrelated") {
                        s.link.mode = optics::CorrelationMode::AntiCorrelated;
                      } else {
                        throw InputError("scenario: " + k + " must be inverted or anticorrelated");
                      }
                    },
                    [&s] {
                      return std::string(s.link.mode == optics::CorrelationMode::Inverted
                                             ? "inverted"
                                             : "anticorrelated");
                    }};
  auto profile = Field{[&s](const std::string& k, const std::string& v) {
                         const auto t = trim(v);
                         if (t != "gaussian" && t != "tail") {
                           throw InputError("scenario: " + k + " must be gaussian or tail");
                         }
                         s.sidechannel.profile = t;
                       },
                       [&s] { return s.sidechannel.profile; }};
  auto channel = [](ChannelConfig& c) {
    return std::vector<std::pair<std::string, Field>>{{"efficiency", number(c.efficiency)},
                                                      {"background_hz", number(c.background_hz)},
                                                      {"delay_ps", number(c.delay_ps)}};
  };
  return {
      {"link",
       {{"wavelength_m", number(s.link.wavelength_m)},
        {"waist_m", number(s.link.waist_m)},
        {"distance_m", number(s.link.distance_m)},
        {"aperture_diameter_m", number(s.link.aperture_diameter_m)},
        {"pointing_sigma_rad", number(s.link.pointing_sigma_rad)},
        {"pointing_samples", number(s.link.pointing_samples)},
        {"mode", mode}}},
      {"source",
       {{"pair_rate_hz", number(s.source.pair_rate_hz)},
        {"bandwidth_hz", number(s.source.bandwidth_hz)},
        {"jitter_ps", number(s.source.jitter_ps)},
        {"coincidence_bin_ps", number(s.source.coincidence_bin_ps)},
        {"scale", number(s.source.scale)},
        {"time_bin_ps", number(s.source.time_bin_ps)},
        {"bandwidth_sweep_hz", list(s.source.bandwidth_sweep_hz)},
        {"tau_span_ps", number(s.source.tau_span_ps)},
        {"tau_step_ps", number(s.source.tau_step_ps)}}},
      {"channel_a", channel(s.channel_a)},
      {"channel_b", channel(s.channel_b)},
      {"protocol",
       {{"duration_s", number(s.protocol.duration_s)},
        {"correlation_span_s", number(s.protocol.correlation_span_s)},
        {"bin_ps", number(s.protocol.bin_ps)},
        {"window_ps", number(s.protocol.window_ps)},
        {"max_lag_ps", number(s.protocol.max_lag_ps)},
        {"qber_sample_fraction", number(s.protocol.qber_sample_fraction)},
        {"security_margin_bits", number(s.protocol.security_margin_bits)},
        {"s_threshold", number(s.protocol.s_threshold)},
        {"cascade_passes", number(s.protocol.cascade_passes)},
        {"cascade_efficiency", number(s.protocol.cascade_efficiency)},
        {"chsh_pairs", number(s.protocol.chsh_pairs)}}},
      {"state",
       {{"visibility", number(s.state.visibility)},
        {"accidental_fraction", number(s.state.accidental_fraction)},
        {"singlet", boolean(s.state.singlet)},
        {"alice_angles_deg", angles(s.state.angles.alice)},
        {"bob_angles_deg", angles(s.state.angles.bob)}}},
      {"sidechannel",
       {{"sigma_ps", number(s.sidechannel.sigma_ps)},
        {"delta_t0_ps", number(s.sidechannel.delta_t0_ps)},
        {"profile", profile},
        {"tail_ps", number(s.sidechannel.tail_ps)},
        {"bin_widths_ps", list(s.sidechannel.bin_widths_ps)},
        {"start_offsets_ps", list(s.sidechannel.start_offsets_ps)},
        {"figure_delta_t0_ps", list(s.sidechannel.figure_delta_t0_ps)}}},
      {"seeds", {{"master", number(s.seed)}}},
  };
}

}  // namespace detail

inline void Scenario::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw DomainError(std::string("scenario: ") + what);
  };
  need(link.wavelength_m > 0 && link.waist_m > 0, "link wavelength and waist must be positive");
  need(link.distance_m >= 0, "link distance must be non-negative");
  need(link.aperture_diameter_m > 0, "aperture diameter must be positive");
  need(link.pointing_sigma_rad >= 0, "pointing sigma must be non-negative");
  need(link.pointing_samples > 0, "pointing_samples must be positive");
  need(source.pair_rate_hz > 0 && source.bandwidth_hz > 0, "source rate and bandwidth must be positive");
  need(source.jitter_ps >= 0 && source.coincidence_bin_ps >= 0, "source widths must be non-negative");
  need(source.time_bin_ps > 0, "time_bin_ps must be positive");
  need(source.tau_step_ps > 0 && source.tau_span_ps >= 0, "tau grid invalid");
  for (const auto* c : {&channel_a, &channel_b}) {
    need(c->efficiency >= 0 && c->efficiency <= 1, "channel efficiency must lie in [0, 1]");
    need(c->background_hz >= 0, "background rate must be non-negative");
    need(c->delay_ps >= 0, "channel delay must be non-negative");
  }
  need(protocol.duration_s > 0, "duration must be positive");
  need(protocol.correlation_span_s > 0, "correlation span must be positive");
  need(protocol.bin_ps > 0 && protocol.window_ps > 0, "bin and window must be positive");
  need(protocol.max_lag_ps >= 0, "max lag must be non-negative");
  need(protocol.qber_sample_fraction > 0 && protocol.qber_sample_fraction < 1,
       "qber sample fraction must lie in (0, 1)");
  need(protocol.cascade_passes > 0, "cascade passes must be positive");
  need(protocol.cascade_efficiency >= 1, "cascade efficiency must be at least 1");
  need(protocol.chsh_pairs > 0, "chsh_pairs must be positive");
  state.model().validate();
  need(sidechannel.sigma_ps > 0 && sidechannel.tail_ps > 0, "side-channel widths must be positive");
  need(sidechannel.delta_t0_ps >= 0, "delta_t0 must be non-negative");
  for (auto w : sidechannel.bin_widths_ps) need(w > 0, "bin widths must be positive");
  for (auto d : sidechannel.figure_delta_t0_ps) need(d >= 0, "figure delta_t0 must be non-negative");
}

inline Scenario parse_scenario(std::istream& in) {
  namespace pt = boost::property_tree;
  const std::string text(std::istreambuf_iterator<char>(in), {});
  Scenario s;
  auto schema = detail::schema(s);

  // The INI reader drops sections without keys, so headers are checked here.
  std::istringstream lines(text);
  std::string line;
  for (std::size_t no = 1; std::getline(lines, line); ++no) {
    const auto t = detail::trim(line);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') continue;
    const auto name = detail::trim(t.substr(1, t.size() - 2));
    if (std::none_of(schema.begin(), schema.end(), [&](const auto& p) { return p.first == name; })) {
      throw InputError("scenario: unknown section [" + name + "]", no);
    }
  }

  pt::ptree tree;
  try {
    std::istringstream body(text);
    pt::read_ini(body, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError("scenario: " + e.message(), e.line());
  }
  for (const auto& [section, body] : tree) {
    auto sec = std::find_if(schema.begin(), schema.end(),
                            [&](const auto& p) { return p.first == section; });
    if (sec == schema.end()) throw InputError("scenario: unknown section [" + section + "]");
    if (!body.data().empty()) throw InputError("scenario: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      auto f = std::find_if(sec->second.begin(), sec->second.end(),
                            [&](const auto& p) { return p.first == key; });
      if (f == sec->second.end()) {
        throw InputError("scenario: unknown key '" + key + "' in [" + section + "]");
      }
      f->second.set(section + "." + key, node.data());
    }
  }
  s.validate();
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario '" + path + "'");
  return parse_scenario(in);
}

/// Writes every setting, defaults included, in a form parse_scenario accepts.
inline void write_scenario(std::ostream& out, const Scenario& s) {
  Scenario copy = s;
  const auto schema = detail::schema(copy);
  bool first = true;
  for (const auto& [section, fields] : schema) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section << "]\n";
    for (const auto& [key, field] : fields) out << key << " = " << field.get() << '\n';
  }
}

}  // namespace qkdsim::scenario
