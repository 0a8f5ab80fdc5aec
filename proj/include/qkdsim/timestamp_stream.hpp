#pragma once

#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace qkdsim {

/// Time in integer picoseconds.
using Picoseconds = std::int64_t;

inline constexpr double kPsPerSecond = 1e12;

struct DetectionEvent {
  Picoseconds time = 0;
  std::uint8_t basis = 0;
  std::uint8_t outcome = 0;

  friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

/// Ordered detections recorded by one node.
struct TimestampStream {
  std::string node_id;
  std::vector<DetectionEvent> events;
  Picoseconds duration = 0;
  Picoseconds time_bin = 1;

  double duration_seconds() const { return static_cast<double>(duration) / kPsPerSecond; }
  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  /// True when times are strictly increasing and lie in [0, duration].
  bool well_formed() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].time < 0 || events[i].time > duration) return false;
      if (i > 0 && events[i].time <= events[i - 1].time) return false;
    }
    return true;
  }
};

inline constexpr std::string_view kTimestampHeader = "time_ps,basis,outcome";

inline void write_timestamps(std::ostream& out, const TimestampStream& s) {
  out << kTimestampHeader << '\n';
  for (const auto& e : s.events) {
    out << e.time << ',' << int(e.basis) << ',' << int(e.outcome) << '\n';
  }
}

/// Parses the timestamp CSV. The duration is taken as the last event time
/// unless the caller overrides it afterwards.
inline TimestampStream read_timestamps(std::istream& in, std::string node_id = {}) {
  TimestampStream s;
  s.node_id = std::move(node_id);
  csv::read_rows(in, kTimestampHeader, 3, [&](const auto& f, std::size_t line) {
    DetectionEvent e;
    e.time = csv::parse_number<Picoseconds>(f[0], line);
    const int basis = csv::parse_number<int>(f[1], line);
    const int outcome = csv::parse_number<int>(f[2], line);
    if (e.time < 0) throw InputError("negative timestamp", line);
    if (basis < 0 || basis > 255) throw InputError("basis tag out of range", line);
    if (outcome != 0 && outcome != 1) throw InputError("outcome must be 0 or 1", line);
    if (!s.events.empty() && e.time <= s.events.back().time) {
      throw InputError("timestamps must be strictly increasing", line);
    }
    e.basis = static_cast<std::uint8_t>(basis);
    e.outcome = static_cast<std::uint8_t>(outcome);
    s.events.push_back(e);
  });
  s.duration = s.events.empty() ? 0 : s.events.back().time;
  return s;
}

inline TimestampStream load_timestamps(const std::string& path) {
  auto in = csv::open_input(path);
  return read_timestamps(in, path);
}

inline void save_timestamps(const std::string& path, const TimestampStream& s) {
  auto out = csv::open_output(path);
  write_timestamps(out, s);
}

}  // namespace qkdsim
