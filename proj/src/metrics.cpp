#include "t1map/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace t1map {

namespace fs = std::filesystem;

double dice(const Mask &a, const Mask &b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("dice: masks differ in shape");
  }
  const std::size_t na = a.count();
  const std::size_t nb = b.count();
  if (na + nb == 0) {
    throw NumericError("dice is undefined for two empty masks");
  }
  return 2.0 * static_cast<double>((a & b).count()) / static_cast<double>(na + nb);
}

namespace {

struct Point {
  double y;
  double x;
};

std::vector<Point> boundary(const Mask &m, const Grid2D &grid) {
  std::vector<Point> pts;
  const int h = m.height();
  const int w = m.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m(y, x)) {
        continue;
      }
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !m(y - 1, x) || !m(y + 1, x) ||
                        !m(y, x - 1) || !m(y, x + 1);
      if (edge) {
        pts.push_back({y * grid.spacing_y, x * grid.spacing_x});
      }
    }
  }
  return pts;
}

double directed(const std::vector<Point> &from, const std::vector<Point> &to) {
  double worst = 0.0;
  for (const auto &p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &q : to) {
      const double dy = p.y - q.y;
      const double dx = p.x - q.x;
      best = std::min(best, dy * dy + dx * dx);
      if (best <= worst) {
        break;
      }
    }
    worst = std::max(worst, best);
  }
  return worst;
}

} // namespace

double hausdorff(const Mask &a, const Mask &b, const Grid2D &grid) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("hausdorff: masks differ in shape");
  }
  if (a.count() == 0 || b.count() == 0) {
    throw NumericError("hausdorff is undefined for an empty mask");
  }
  const auto pa = boundary(a, grid);
  const auto pb = boundary(b, grid);
  return std::sqrt(std::max(directed(pa, pb), directed(pb, pa)));
}

double icc3(std::span<const double> test, std::span<const double> retest) {
  if (test.size() != retest.size()) {
    throw std::invalid_argument("icc3: test and retest differ in length");
  }
  const std::size_t n = test.size();
  if (n < 3) {
    throw std::invalid_argument("icc3 needs at least 3 targets");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(test[i]) || !std::isfinite(retest[i])) {
      throw std::invalid_argument("icc3: non-finite value");
    }
  }
  double mean_a = 0.0;
  double mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += test[i];
    mean_b += retest[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);

  double ss_rows = 0.0;
  double ss_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = test[i] - mean_a;
    const double b = retest[i] - mean_b;
    const double row = 0.5 * (a + b);
    ss_rows += 2.0 * row * row;
    ss_err += (a - row) * (a - row) + (b - row) * (b - row);
  }
  if (ss_rows == 0.0) {
    throw NumericError("icc3 is undefined without between-target variance");
  }
  const double df = static_cast<double>(n - 1);
  const double ms_r = ss_rows / df;
  const double ms_e = ss_err / df;
  return (ms_r - ms_e) / (ms_r + ms_e);
}

std::string to_string(AhaRing ring) {
  switch (ring) {
  case AhaRing::Basal:
    return "basal";
  case AhaRing::Mid:
    return "mid";
  case AhaRing::Apical:
    return "apical";
  }
  return "?";
}

AhaRing ring_for_slice(int index) {
  static constexpr AhaRing rings[5] = {AhaRing::Basal, AhaRing::Basal, AhaRing::Mid, AhaRing::Mid, AhaRing::Apical};
  if (index < 0 || index >= 5) {
    throw std::invalid_argument("ring_for_slice: slice index must be in 0..4");
  }
  return rings[index];
}

LabelMap aha16_labels(const Mask &myo, double center_x, double center_y, double ref_angle_deg, AhaRing ring) {
  if (myo.count() == 0) {
    throw std::invalid_argument("aha16_labels: empty myocardium");
  }
  if (!(center_x >= 0.0 && center_x <= myo.width() - 1 && center_y >= 0.0 && center_y <= myo.height() - 1)) {
    throw std::invalid_argument("aha16_labels: center outside the grid");
  }
  const int sectors = ring == AhaRing::Apical ? 4 : 6;
  const int offset = ring == AhaRing::Basal ? 0 : ring == AhaRing::Mid ? 6 : 12;
  const double width = 360.0 / sectors;

  LabelMap out{myo.height(), myo.width(), std::vector<int>(myo.size(), 0)};
  for (int y = 0; y < myo.height(); ++y) {
    for (int x = 0; x < myo.width(); ++x) {
      if (!myo(y, x)) {
        continue;
      }
      const double theta = std::atan2(-(y - center_y), x - center_x) * 180.0 / std::numbers::pi;
      double rel = std::fmod(theta - ref_angle_deg, 360.0);
      if (rel < 0.0) {
        rel += 360.0;
      }
      const int sector = std::min(sectors - 1, static_cast<int>(rel / width));
      out.labels[myo.index(y, x)] = offset + sector + 1;
    }
  }
  return out;
}

SegmentalReport segmental_means(const Raster &t1, const LabelMap &labels, const Mask *invalid) {
  if (t1.height() != labels.height || t1.width() != labels.width ||
      (invalid && !invalid->same_shape_as(t1))) {
    throw std::invalid_argument("segmental_means: grids differ");
  }
  std::array<double, kAhaSegments> sums{};
  SegmentalReport r;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    const int label = labels.labels[i];
    if (label < 1 || label > kAhaSegments || (invalid && (*invalid)[i])) {
      continue;
    }
    sums[label - 1] += t1[i];
    ++r.segment_counts[label - 1];
  }
  for (int s = 0; s < kAhaSegments; ++s) {
    r.segment_means[s] = r.segment_counts[s] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                  : sums[s] / static_cast<double>(r.segment_counts[s]);
  }
  return r;
}

void merge_into(SegmentalReport &total, const SegmentalReport &slice) {
  for (int s = 0; s < kAhaSegments; ++s) {
    const std::size_t n = total.segment_counts[s] + slice.segment_counts[s];
    if (slice.segment_counts[s] == 0) {
      continue;
    }
    const double prev = total.segment_counts[s] == 0 ? 0.0 : total.segment_means[s] * total.segment_counts[s];
    total.segment_means[s] = (prev + slice.segment_means[s] * slice.segment_counts[s]) / static_cast<double>(n);
    total.segment_counts[s] = n;
  }
}

Overlap registration_overlap(std::span<const SegFrame> segs, std::span<const DisplacementField> fields,
                             int reference, const Grid2D &grid) {
  if (segs.size() != fields.size() || reference < 0 || reference >= static_cast<int>(segs.size())) {
    throw std::invalid_argument("registration_overlap: inconsistent inputs");
  }
  if (segs.size() < 2) {
    throw std::invalid_argument("registration_overlap needs at least two frames");
  }
  const Mask &ref = segs[reference].myo;
  Overlap o;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (static_cast<int>(i) == reference) {
      continue;
    }
    const Mask moved = Mask::threshold(warp_image(segs[i].myo.to_raster(), fields[i]));
    o.dice += dice(ref, moved);
    o.hd_mm += hausdorff(ref, moved, grid);
  }
  const double n = static_cast<double>(segs.size() - 1);
  o.dice /= n;
  o.hd_mm /= n;
  return o;
}

double masked_mean(const Raster &values, const Mask &mask, const Mask *invalid) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i] && !(invalid && (*invalid)[i])) {
      sum += values[i];
      ++n;
    }
  }
  if (n == 0) {
    throw NumericError("masked_mean over an empty region");
  }
  return sum / static_cast<double>(n);
}

void set_segments(MetricsRow &row, const SegmentalReport &report) {
  for (int s = 0; s < kAhaSegments; ++s) {
    if (report.segment_counts[s] > 0) {
      row.t1_seg[s] = report.segment_means[s];
    } else {
      row.t1_seg[s].reset();
    }
  }
}

namespace {

constexpr int kFixedColumns = 8;

std::string format(const std::optional<double> &v) {
  if (!v || !std::isfinite(*v)) {
    return "";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, *v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_value(const std::string &s) {
  if (s.empty()) {
    return std::nullopt;
  }
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("metrics CSV: bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

} // namespace

std::string metrics_csv_header() {
  std::string h = "case,slice,method,r2_mean,dice,hd_mm,mean_detJ,folds";
  char buf[16];
  for (int s = 1; s <= kAhaSegments; ++s) {
    std::snprintf(buf, sizeof buf, ",t1_seg_%02d", s);
    h += buf;
  }
  return h;
}

std::string to_csv(std::span<const MetricsRow> rows) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto &r : rows) {
    for (const auto *text : {&r.case_id, &r.slice, &r.method}) {
      if (text->find_first_of(",\n") != std::string::npos) {
        throw std::invalid_argument("metrics CSV: identifier contains a separator: " + *text);
      }
    }
    out += r.case_id + "," + r.slice + "," + r.method;
    for (const auto *v : {&r.r2_mean, &r.dice, &r.hd_mm, &r.mean_detj, &r.folds}) {
      out += "," + format(*v);
    }
    for (const auto &v : r.t1_seg) {
      out += "," + format(v);
    }
    out += "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) {
    throw IoError("metrics CSV: unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != static_cast<std::size_t>(kFixedColumns + kAhaSegments)) {
      throw IoError("metrics CSV: expected " + std::to_string(kFixedColumns + kAhaSegments) + " columns, got " +
                    std::to_string(cells.size()));
    }
    MetricsRow r;
    r.case_id = cells[0];
    r.slice = cells[1];
    r.method = cells[2];
    r.r2_mean = parse_value(cells[3]);
    r.dice = parse_value(cells[4]);
    r.hd_mm = parse_value(cells[5]);
    r.mean_detj = parse_value(cells[6]);
    r.folds = parse_value(cells[7]);
    for (int s = 0; s < kAhaSegments; ++s) {
      r.t1_seg[s] = parse_value(cells[kFixedColumns + s]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_metrics_csv(std::span<const MetricsRow> rows, const fs::path &path) {
  write_file_atomic(path, to_csv(rows));
}

std::vector<MetricsRow> read_metrics_csv(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

} // namespace t1map
