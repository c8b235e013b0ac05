#include "mergecast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "mergecast/error.hpp"
#include "mergecast/format.hpp"

namespace mergecast::eval {

ForecastScore score_forecast(std::span<const ScoredForecast> results, double dt, int seconds) {
  const auto per_second = static_cast<std::size_t>(std::lround(1.0 / dt));
  const std::size_t needed = per_second * static_cast<std::size_t>(seconds);

  std::vector<const ScoredForecast*> usable;
  ForecastScore score;
  for (const auto& r : results) {
    const bool ok = r.truth.size() >= needed && r.predicted.size() >= needed &&
                    std::all_of(r.truth.begin(), r.truth.begin() + static_cast<long>(needed),
                                [](double v) { return std::isfinite(v); });
    if (ok) usable.push_back(&r);
    else ++score.excluded;
  }

  for (int s = 1; s <= seconds; ++s) {
    const std::size_t idx = static_cast<std::size_t>(s) * per_second - 1;
    HorizonScore h;
    h.second = s;
    h.count = usable.size();
    std::size_t in5 = 0, in10 = 0;
    double err = 0.0;
    for (const auto* r : usable) {
      const double e = std::abs(r->predicted[idx] - r->truth[idx]);
      in5 += static_cast<std::size_t>(e < 5.0);
      in10 += static_cast<std::size_t>(e < 10.0);
      err += e;
    }
    if (!usable.empty()) {
      const auto n = static_cast<double>(usable.size());
      h.within_5m = static_cast<double>(in5) / n;
      h.within_10m = static_cast<double>(in10) / n;
      h.mean_abs_error = err / n;
    }
    score.horizons.push_back(h);
  }
  return score;
}

ClassMetrics metrics_from_confusion(const Confusion& c) {
  ClassMetrics m;
  m.counts = c;
  if (c.total() > 0) m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tn + c.fp > 0) m.tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (c.tp + c.fp > 0) m.ppv = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  return m;
}

ClassificationScore score_classification_records(std::span<const ClassificationRecord> records) {
  std::map<std::pair<forest::Kind, int>, Confusion> conf;
  for (const auto& r : records) {
    auto& c = conf[{r.kind, r.horizon}];
    if (r.decision) (r.label == 1 ? c.tp : c.fp)++;
    else (r.label == 1 ? c.fn : c.tn)++;
  }
  ClassificationScore out;
  for (const auto& [key, c] : conf) out[key] = metrics_from_confusion(c);
  return out;
}

ClassificationScore score_classification(const forest::Registry& registry, const TestSets& test_sets,
                                         std::vector<ClassificationRecord>* records) {
  std::vector<ClassificationRecord> local;
  ClassificationScore out;
  for (const auto& [key, set] : test_sets) {
    out[key] = ClassMetrics{};
    auto it = registry.find(key);
    if (it == registry.end()) continue;
    for (const auto& s : set.samples) {
      const auto p = forest::predict_lc(it->second, s.features);
      local.push_back(ClassificationRecord{key.first, key.second, s.vehicle_id, s.step, s.label, p.probability,
                                           p.lane_change});
    }
  }
  for (auto& [key, m] : score_classification_records(local)) out[key] = m;
  if (records) *records = std::move(local);
  return out;
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

}  // namespace

void write_forecast_score(std::ostream& out, const ForecastScore& s) {
  out << "second,count,within_5m,within_10m,mean_abs_error\n";
  for (const auto& h : s.horizons) {
    out << h.second << ',' << h.count << ',' << fmt_double(h.within_5m) << ',' << fmt_double(h.within_10m) << ','
        << fmt_double(h.mean_abs_error) << '\n';
  }
}

void write_classification_score(std::ostream& out, const ClassificationScore& s) {
  out << "kind,t,tp,fp,tn,fn,accuracy,tnr,ppv\n";
  for (const auto& [key, m] : s) {
    out << forest::kind_name(key.first) << ',' << key.second << ',' << m.counts.tp << ',' << m.counts.fp << ','
        << m.counts.tn << ',' << m.counts.fn << ',' << opt_str(m.accuracy) << ',' << opt_str(m.tnr) << ','
        << opt_str(m.ppv) << '\n';
  }
}

void write_classification_records(std::ostream& out, std::span<const ClassificationRecord> records) {
  out << "kind,t,vehicle_id,step,label,probability,decision\n";
  for (const auto& r : records) {
    out << forest::kind_name(r.kind) << ',' << r.horizon << ',' << r.vehicle_id << ',' << r.step << ',' << r.label
        << ',' << fmt_double(r.probability) << ',' << (r.decision ? 1 : 0) << '\n';
  }
}

std::vector<ClassificationRecord> read_classification_records(std::istream& in) {
  std::vector<ClassificationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw ParseError(line_no, "classification record needs 7 fields");
    ClassificationRecord r;
    auto kind = forest::kind_from_name(cells[0]);
    long t = 0, vid = 0, step = 0, label = 0, dec = 0;
    if (!kind || !parse_int(cells[1], t) || !parse_int(cells[2], vid) || !parse_int(cells[3], step) ||
        !parse_int(cells[4], label) || !parse_double(cells[5], r.probability) || !parse_int(cells[6], dec)) {
      throw ParseError(line_no, "malformed classification record");
    }
    r.kind = *kind;
    r.horizon = static_cast<int>(t);
    r.vehicle_id = static_cast<int>(vid);
    r.step = static_cast<std::size_t>(step);
    r.label = static_cast<int>(label);
    r.decision = dec != 0;
    out.push_back(r);
  }
  return out;
}

}  // namespace mergecast::eval
