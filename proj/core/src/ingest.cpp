#include "mergecast/ingest.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "mergecast/error.hpp"
#include "mergecast/format.hpp"

namespace mergecast::ingest {

namespace {

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  if (delim == ' ') {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct ResolvedColumns {
  int vehicle_id, timestamp, x, y, lane_id;
  int v = -1, u = -1, a = -1, e = -1;
};

int resolve(const ColumnRef& ref, const std::unordered_map<std::string, int>& header,
            const char* field, bool required) {
  if (!ref.present()) {
    if (required) throw SchemaError(std::string("no column mapped for required field '") + field + "'");
    return -1;
  }
  if (ref.index >= 0) return ref.index;
  if (header.empty()) {
    throw SchemaError(std::string("field '") + field + "' is mapped by name but the file has no header");
  }
  auto it = header.find(ref.name);
  if (it == header.end()) {
    if (required) throw SchemaError("missing required column '" + ref.name + "' for field '" + field + "'");
    return -1;
  }
  return it->second;
}

double field_value(const std::vector<std::string_view>& cells, int col, std::size_t line,
                   const char* field) {
  if (col < 0) return 0.0;
  if (static_cast<std::size_t>(col) >= cells.size()) {
    throw ParseError(line, std::string("row has no column ") + std::to_string(col) + " for '" + field + "'");
  }
  double v = 0.0;
  if (!parse_double(cells[col], v) || !std::isfinite(v)) {
    throw ParseError(line, std::string("non-numeric value '") + std::string(trim(cells[col])) +
                               "' in field '" + field + "'");
  }
  return v;
}

int int_value(const std::vector<std::string_view>& cells, int col, std::size_t line, const char* field) {
  if (static_cast<std::size_t>(col) >= cells.size()) {
    throw ParseError(line, std::string("row has no column ") + std::to_string(col) + " for '" + field + "'");
  }
  long v = 0;
  if (!parse_int(cells[col], v)) {
    throw ParseError(line, std::string("non-integer value '") + std::string(trim(cells[col])) +
                               "' in field '" + field + "'");
  }
  return static_cast<int>(v);
}

RawRecord lerp(const RawRecord& lo, const RawRecord& hi, double w) {
  RawRecord r = lo;
  auto mix = [w](double p, double q) { return p + (q - p) * w; };
  r.x = mix(lo.x, hi.x);
  r.y = mix(lo.y, hi.y);
  r.v = mix(lo.v, hi.v);
  r.u = mix(lo.u, hi.u);
  r.a = mix(lo.a, hi.a);
  r.e = mix(lo.e, hi.e);
  return r;
}

}  // namespace

Schema Schema::canonical() {
  Schema s;
  s.delimiter = ',';
  s.has_header = true;
  s.vehicle_id.name = "vehicle_id";
  s.timestamp.name = "t";
  s.x.name = "x";
  s.y.name = "y";
  s.v.name = "v";
  s.u.name = "u";
  s.a.name = "a";
  s.e.name = "e";
  s.lane_id.name = "lane_id";
  return s;
}

RecordGroups parse_trajectory_stream(std::istream& in, const Schema& schema) {
  std::unordered_map<std::string, int> header;
  std::string line;
  std::size_t line_no = 0;

  if (schema.has_header) {
    while (std::getline(in, line)) {
      ++line_no;
      auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      auto cells = split(t, schema.delimiter);
      for (std::size_t i = 0; i < cells.size(); ++i) header.emplace(std::string(trim(cells[i])), static_cast<int>(i));
      break;
    }
    if (header.empty()) throw SchemaError("file has no header row");
  }

  ResolvedColumns cols{
      resolve(schema.vehicle_id, header, "vehicle_id", true),
      resolve(schema.timestamp, header, "timestamp", true),
      resolve(schema.x, header, "x", true),
      resolve(schema.y, header, "y", true),
      resolve(schema.lane_id, header, "lane_id", true),
  };
  cols.v = resolve(schema.v, header, "v", false);
  cols.u = resolve(schema.u, header, "u", false);
  cols.a = resolve(schema.a, header, "a", false);
  cols.e = resolve(schema.e, header, "e", false);

  RecordGroups groups;
  const double ls = schema.length_scale;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cells = split(t, schema.delimiter);
    RawRecord r;
    r.vehicle_id = int_value(cells, cols.vehicle_id, line_no, "vehicle_id");
    r.timestamp = field_value(cells, cols.timestamp, line_no, "timestamp") * schema.time_scale;
    r.x = field_value(cells, cols.x, line_no, "x") * ls;
    r.y = field_value(cells, cols.y, line_no, "y") * ls;
    r.lane_id = int_value(cells, cols.lane_id, line_no, "lane_id");
    r.v = field_value(cells, cols.v, line_no, "v") * ls;
    r.u = field_value(cells, cols.u, line_no, "u") * ls;
    r.a = field_value(cells, cols.a, line_no, "a") * ls;
    r.e = field_value(cells, cols.e, line_no, "e") * ls;
    if (!(r.timestamp >= 0.0)) throw ParseError(line_no, "negative timestamp");
    if (!schema.lanes.empty() && !schema.lanes.contains(r.lane_id)) {
      throw ParseError(line_no, "lane " + std::to_string(r.lane_id) + " is not in the configured lane set");
    }
    groups[r.vehicle_id].push_back(r);
  }
  for (auto& [id, recs] : groups) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RawRecord& p, const RawRecord& q) { return p.timestamp < q.timestamp; });
  }
  return groups;
}

RecordGroups parse_trajectory_file(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trajectory file " + path.string());
  return parse_trajectory_stream(in, schema);
}

std::vector<RawRecord> fill_missing_steps(std::span<const RawRecord> records, double native_dt) {
  if (!(native_dt > 0.0)) throw ParameterError("native_dt must be positive");
  if (records.size() < 2) throw ParameterError("at least 2 records are needed to interpolate");

  const double t0 = records.front().timestamp;
  std::vector<std::pair<long, const RawRecord*>> indexed;
  indexed.reserve(records.size());
  for (const auto& r : records) {
    const double q = (r.timestamp - t0) / native_dt;
    const long k = std::lround(q);
    if (std::abs(q - static_cast<double>(k)) > 0.25) {
      throw ParameterError("timestamp " + fmt_double(r.timestamp) + " is off the native grid");
    }
    if (!indexed.empty() && k < indexed.back().first) throw ParameterError("records are not time-sorted");
    if (!indexed.empty() && k == indexed.back().first) continue;
    indexed.emplace_back(k, &r);
  }
  if (indexed.size() < 2) throw ParameterError("at least 2 distinct timestamps are needed to interpolate");

  std::vector<RawRecord> out;
  out.reserve(static_cast<std::size_t>(indexed.back().first) + 1);
  for (std::size_t j = 0; j + 1 < indexed.size(); ++j) {
    const auto [k_lo, lo] = indexed[j];
    const auto [k_hi, hi] = indexed[j + 1];
    for (long k = k_lo; k < k_hi; ++k) {
      RawRecord r = (k == k_lo) ? *lo : lerp(*lo, *hi, static_cast<double>(k - k_lo) / static_cast<double>(k_hi - k_lo));
      r.timestamp = t0 + static_cast<double>(k) * native_dt;
      out.push_back(r);
    }
  }
  RawRecord last = *indexed.back().second;
  last.timestamp = t0 + static_cast<double>(indexed.back().first) * native_dt;
  out.push_back(last);
  return out;
}

std::vector<std::vector<double>> savitzky_golay_weights(int window, int poly_order) {
  if (window < 1 || window % 2 == 0) throw ParameterError("Savitzky-Golay window must be a positive odd integer");
  if (poly_order < 0 || poly_order >= window) throw ParameterError("Savitzky-Golay poly_order must be in [0, window)");
  const int half = window / 2;
  const int terms = poly_order + 1;

  Eigen::MatrixXd vander(window, terms);
  for (int i = 0; i < window; ++i) {
    const double s = i - half;
    double p = 1.0;
    for (int j = 0; j < terms; ++j) {
      vander(i, j) = p;
      p *= s;
    }
  }
  // Coefficients of the fitted polynomial are coef = pinv(V) * y.
  const Eigen::MatrixXd pinv =
      vander.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(window, window));

  std::vector<std::vector<double>> weights(window, std::vector<double>(window));
  for (int r = 0; r < window; ++r) {
    Eigen::RowVectorXd basis(terms);
    const double s = r - half;
    double p = 1.0;
    for (int j = 0; j < terms; ++j) {
      basis(j) = p;
      p *= s;
    }
    const Eigen::RowVectorXd w = basis * pinv;
    for (int c = 0; c < window; ++c) weights[r][c] = w(c);
  }
  return weights;
}

std::vector<double> savitzky_golay_smooth(std::span<const double> series, int window, int poly_order) {
  const auto weights = savitzky_golay_weights(window, poly_order);
  const auto n = series.size();
  const auto w = static_cast<std::size_t>(window);
  if (n < w) throw ParameterError("series shorter than the Savitzky-Golay window");
  const std::size_t half = w / 2;

  auto apply = [&](const std::vector<double>& row, std::size_t start) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) acc += row[j] * series[start + j];
    return acc;
  };

  std::vector<double> out(n);
  for (std::size_t k = 0; k < half; ++k) out[k] = apply(weights[k], 0);
  for (std::size_t k = half; k + half < n; ++k) out[k] = apply(weights[half], k - half);
  for (std::size_t k = n - half; k < n; ++k) out[k] = apply(weights[k - (n - w)], n - w);
  return out;
}

Kinematics differentiate_kinematics(std::span<const double> x, double dt) {
  const auto n = x.size();
  if (n < 3) throw ParameterError("differentiation needs at least 3 samples");
  if (!(dt > 0.0)) throw ParameterError("dt must be positive");
  Kinematics k;
  k.velocity.resize(n);
  k.acceleration.resize(n);
  const double dt2 = dt * dt;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    k.velocity[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
    k.acceleration[i] = (x[i + 1] - 2.0 * x[i] + x[i - 1]) / dt2;
  }
  k.velocity[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
  k.velocity[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
  if (n >= 4) {
    k.acceleration[0] = (2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]) / dt2;
    k.acceleration[n - 1] = (2.0 * x[n - 1] - 5.0 * x[n - 2] + 4.0 * x[n - 3] - x[n - 4]) / dt2;
  } else {
    k.acceleration[0] = k.acceleration[n - 1] = k.acceleration[1];
  }
  return k;
}

Track resample_track(std::span<const RawRecord> gap_free, double native_dt, double target_dt,
                     const SmoothingConfig& smoothing) {
  if (!(native_dt > 0.0) || !(target_dt > 0.0)) throw ParameterError("time steps must be positive");
  const double ratio = target_dt / native_dt;
  const long stride = std::lround(ratio);
  if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio) {
    throw ParameterError("target_dt must be an integer multiple of native_dt");
  }
  if (gap_free.empty()) throw ParameterError("empty record sequence");

  const std::size_t n = gap_free.size();
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = gap_free[i].x;
    ys[i] = gap_free[i].y;
  }

  // Short tracks get the widest odd window they can hold.
  int window = smoothing.window;
  if (static_cast<std::size_t>(window) > n) window = static_cast<int>(n % 2 == 1 ? n : n - 1);
  if (window > smoothing.poly_order) {
    xs = savitzky_golay_smooth(xs, window, smoothing.poly_order);
    ys = savitzky_golay_smooth(ys, window, smoothing.poly_order);
  }

  std::vector<double> dx, dy;
  std::vector<int> lanes;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(stride)) {
    dx.push_back(xs[i]);
    dy.push_back(ys[i]);
    lanes.push_back(gap_free[i].lane_id);
  }
  if (dx.size() < 3) throw ParameterError("fewer than 3 samples remain after decimation");

  const auto kx = differentiate_kinematics(dx, target_dt);
  const auto ky = differentiate_kinematics(dy, target_dt);

  Track track;
  track.vehicle_id = gap_free.front().vehicle_id;
  track.t0 = gap_free.front().timestamp;
  track.dt = target_dt;
  track.lane_ids = std::move(lanes);
  track.states.resize(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    track.states[i] = VehicleState{dx[i], dy[i], kx.velocity[i], ky.velocity[i], kx.acceleration[i], ky.acceleration[i]};
  }
  return track;
}

IngestResult ingest_groups(const RecordGroups& groups, const IngestConfig& cfg) {
  IngestResult result;
  for (const auto& [id, recs] : groups) {
    if (recs.size() < std::max<std::size_t>(cfg.min_records, 2)) {
      ++result.dropped;
      continue;
    }
    try {
      const auto filled = fill_missing_steps(recs, cfg.native_dt);
      result.tracks.push_back(resample_track(filled, cfg.native_dt, cfg.target_dt, cfg.smoothing));
    } catch (const ParameterError&) {
      ++result.dropped;
    }
  }
  return result;
}

IngestResult ingest_file(const std::filesystem::path& path, const IngestConfig& cfg) {
  return ingest_groups(parse_trajectory_file(path, cfg.schema), cfg);
}

void write_tracks(std::ostream& out, std::span<const Track> tracks) {
  out << "vehicle_id,t,x,y,v,u,a,e,lane_id\n";
  for (const auto& tr : tracks) {
    for (std::size_t k = 0; k < tr.size(); ++k) {
      const auto& s = tr.states[k];
      out << tr.vehicle_id << ',' << fmt_double(tr.time(k)) << ',' << fmt_double(s.x) << ','
          << fmt_double(s.y) << ',' << fmt_double(s.v) << ',' << fmt_double(s.u) << ','
          << fmt_double(s.a) << ',' << fmt_double(s.e) << ',' << tr.lane_ids[k] << '\n';
    }
  }
}

void write_tracks(const std::filesystem::path& path, std::span<const Track> tracks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write track file " + path.string());
  write_tracks(out, tracks);
}

std::vector<Track> read_tracks(std::istream& in) {
  const auto groups = parse_trajectory_stream(in, Schema::canonical());
  std::vector<Track> tracks;
  tracks.reserve(groups.size());
  for (const auto& [id, recs] : groups) {
    Track tr;
    tr.vehicle_id = id;
    tr.t0 = recs.front().timestamp;
    tr.dt = recs.size() > 1 ? std::round((recs[1].timestamp - recs[0].timestamp) * 1e6) / 1e6 : kTrackDt;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto& r = recs[k];
      if (std::abs(r.timestamp - tr.time(k)) > 1e-6) {
        throw ParameterError("vehicle " + std::to_string(id) + " is not on a uniform time grid");
      }
      tr.states.push_back(VehicleState{r.x, r.y, r.v, r.u, r.a, r.e});
      tr.lane_ids.push_back(r.lane_id);
    }
    // Snap the step to the microsecond grid the writer started from.
    if (recs.size() > 1) {
      const double span = (recs.back().timestamp - recs.front().timestamp) / static_cast<double>(recs.size() - 1);
      tr.dt = std::round(span * 1e6) / 1e6;
    }
    tracks.push_back(std::move(tr));
  }
  return tracks;
}

std::vector<Track> read_tracks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open track file " + path.string());
  return read_tracks(in);
}

}  // namespace mergecast::ingest
