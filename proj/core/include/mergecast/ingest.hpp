#pragma once

// Trajectory ingestion: parse delimited trajectory files, repair skipped
// samples, smooth positions and re-derive velocities and accelerations on a
// uniform grid.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mergecast/types.hpp"

namespace mergecast::ingest {

/// One row of a raw trajectory file, converted to SI units.
struct RawRecord {
  int vehicle_id = 0;
  double timestamp = 0.0;
  double x = 0.0;
  double y = 0.0;
  int lane_id = 0;
  double v = 0.0;
  double u = 0.0;
  double a = 0.0;
  double e = 0.0;
};

/// Where each field lives in a delimited file. A column is named either by
/// header text (when the file has a header) or by zero-based index.
struct ColumnRef {
  std::string name;
  int index = -1;

  bool present() const noexcept { return index >= 0 || !name.empty(); }
};

struct Schema {
  char delimiter = ',';     ///< ' ' means any run of whitespace
  bool has_header = true;
  ColumnRef vehicle_id;
  ColumnRef timestamp;
  ColumnRef x;
  ColumnRef y;
  ColumnRef lane_id;
  ColumnRef v;  ///< optional
  ColumnRef u;  ///< optional
  ColumnRef a;  ///< optional
  ColumnRef e;  ///< optional
  double time_scale = 1.0;    ///< file time unit to seconds (0.001 for ms)
  double length_scale = 1.0;  ///< file length unit to meters (0.3048 for ft)
  std::set<int> lanes;        ///< accepted lane IDs; empty accepts any

  /// Column layout of the canonical track file written by write_tracks().
  static Schema canonical();
};

/// Records grouped by vehicle, each group sorted by timestamp (stable for
/// equal timestamps).
using RecordGroups = std::map<int, std::vector<RawRecord>>;

RecordGroups parse_trajectory_file(const std::filesystem::path& path, const Schema& schema);
RecordGroups parse_trajectory_stream(std::istream& in, const Schema& schema);

/// Inserts a record at every missing multiple of native_dt between the first
/// and last timestamp. Inserted kinematics are linear interpolants of the
/// bracketing records; the lane ID is copied from the earlier bracket.
/// Repeated timestamps keep the first occurrence.
std::vector<RawRecord> fill_missing_steps(std::span<const RawRecord> records, double native_dt);

/// Savitzky-Golay smoothing with boundary samples taken from the polynomial
/// fitted over the first and last full window.
std::vector<double> savitzky_golay_smooth(std::span<const double> series, int window,
                                          int poly_order);

/// Weight matrix of the Savitzky-Golay filter: row r gives the weights that
/// evaluate the window's least-squares polynomial at offset r - window/2.
std::vector<std::vector<double>> savitzky_golay_weights(int window, int poly_order);

struct Kinematics {
  std::vector<double> velocity;
  std::vector<double> acceleration;
};

/// Second-order finite differences: central stencils inside, one-sided
/// second-order stencils at both ends.
Kinematics differentiate_kinematics(std::span<const double> positions, double dt);

struct SmoothingConfig {
  int window = 11;
  int poly_order = 3;
};

/// Smooths the gap-free native-rate sequence, keeps every
/// (target_dt / native_dt)-th sample and re-derives both channels.
Track resample_track(std::span<const RawRecord> gap_free, double native_dt, double target_dt,
                     const SmoothingConfig& smoothing = {});

struct IngestConfig {
  Schema schema;
  double native_dt = 0.1;
  double target_dt = kTrackDt;
  SmoothingConfig smoothing;
  std::size_t min_records = 2;  ///< shorter vehicles are dropped
};

struct IngestResult {
  std::vector<Track> tracks;  ///< sorted by vehicle_id
  std::size_t dropped = 0;
};

/// parse -> fill -> resample for a whole file.
IngestResult ingest_file(const std::filesystem::path& path, const IngestConfig& cfg);
IngestResult ingest_groups(const RecordGroups& groups, const IngestConfig& cfg);

/// Canonical track file: header plus one row per step with
/// vehicle_id,t,x,y,v,u,a,e,lane_id.
void write_tracks(std::ostream& out, std::span<const Track> tracks);
void write_tracks(const std::filesystem::path& path, std::span<const Track> tracks);

/// Reads a canonical track file back. Rows must already lie on a uniform grid
/// per vehicle.
std::vector<Track> read_tracks(const std::filesystem::path& path);
std::vector<Track> read_tracks(std::istream& in);

}  // namespace mergecast::ingest
