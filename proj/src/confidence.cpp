#include "t1map/confidence.hpp"

#include <stdexcept>
#include <vector>

#include "t1map/log.hpp"

namespace t1map {

int count_components(const Mask &m) {
  const int h = m.height();
  const int w = m.width();
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::size_t> stack;
  int components = 0;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || seen[start]) {
      continue;
    }
    ++components;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(i / static_cast<std::size_t>(w));
      const int x = static_cast<int>(i % static_cast<std::size_t>(w));
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) {
          continue;
        }
        const std::size_t j = m.index(ny[k], nx[k]);
        if (m[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

double mean_confidence(const SegFrame &seg) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < seg.myo.size(); ++i) {
    if (seg.myo[i]) {
      sum += seg.conf[i];
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

ConfidenceSelection select(std::span<const SegFrame> segs, double alpha, double gamma) {
  if (segs.empty()) {
    throw std::invalid_argument("confidence selection needs at least one segmentation");
  }
  if (!(alpha > 0.0 && alpha < 1.0) || !(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("confidence selection needs 0 < alpha < 1 and 0 < gamma <= 1");
  }
  const Mask &first = segs.front().myo;
  for (const auto &s : segs) {
    if (!s.myo.same_shape(first) || !s.lv.same_shape(first) || !first.same_shape_as(s.conf)) {
      throw std::invalid_argument("segmentations must share one grid");
    }
  }

  ConfidenceSelection sel;
  double best_conf = -1.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto &s = segs[i];
    const std::size_t area = s.myo.count();
    if (area == 0) {
      continue;
    }
    std::size_t confident = 0;
    for (std::size_t p = 0; p < s.myo.size(); ++p) {
      if (s.myo[p] && s.conf[p] > alpha) {
        ++confident;
      }
    }
    const double fraction = static_cast<double>(confident) / static_cast<double>(area);
    if (fraction < gamma || count_components(s.myo) != 1) {
      continue;
    }
    sel.members.push_back(static_cast<int>(i));
    const double c = mean_confidence(s);
    if (c > best_conf) {
      best_conf = c;
      sel.reference = static_cast<int>(i);
    }
  }

  if (sel.members.size() < 2) {
    sel.fallback = true;
    sel.extended = Mask(first.height(), first.width(), true);
    if (sel.members.empty()) {
      sel.reference = static_cast<int>(segs.size()) - 1;
      log::warn("no segmentation passed the confidence gate; using the last frame as reference");
    } else {
      log::warn("only one segmentation passed the confidence gate; segmentation losses disabled");
    }
    return sel;
  }

  sel.extended = Mask(first.height(), first.width());
  for (int i : sel.members) {
    sel.extended = sel.extended | segs[static_cast<std::size_t>(i)].myo;
  }
  return sel;
}

std::vector<SegFrame> load_segmentations(const std::filesystem::path &manifest_path) {
  const auto path = resolve_manifest(manifest_path);
  const Manifest m = read_manifest(path);
  const auto base = path.parent_path();
  std::vector<SegFrame> segs;
  for (const auto &f : m.segmentations) {
    SegFrame s;
    s.myo = load_mask(base / f.myo, m.grid.height, m.grid.width);
    s.lv = load_mask(base / f.lv, m.grid.height, m.grid.width);
    s.conf = load_map(base / f.conf, m.grid.height, m.grid.width);
    if (s.conf.min() < 0.0 || s.conf.max() > 1.0 || !s.conf.all_finite()) {
      throw IoError(f.conf + ": confidence values must lie in [0, 1]");
    }
    segs.push_back(std::move(s));
  }
  return segs;
}

} // namespace t1map
