#pragma once

// Confidence-gated segmentation selection: which frames' masks are trusted,
// which frame is the registration reference, and the extended mask K.

#include <filesystem>
#include <span>
#include <vector>

#include "t1map/imaging.hpp"

namespace t1map {

struct SegFrame {
  Mask myo;
  Mask lv;
  Raster conf; // per-pixel probability in [0, 1]
};

struct ConfidenceSelection {
  std::vector<int> members; // G, ascending
  int reference = 0;        // r
  Mask extended;            // K
  bool fallback = false;    // fewer than two trusted frames; segmentation losses are off

  bool segmentation_enabled() const { return !fallback; }
};

/// Number of 4-connected components of the set pixels.
int count_components(const Mask &m);

/// Mean of conf over the pixels of mask; 0 for an empty mask.
double mean_confidence(const SegFrame &seg);

/// Frame i is trusted when its myocardium mask is non-empty and 4-connected and
/// at least `gamma` of its pixels have conf > `alpha`. The reference is the
/// trusted frame with the highest mean confidence (lowest index on ties) and
/// K is the union of the trusted myocardium masks.
///
/// With fewer than two trusted frames the selection falls back: K covers the
/// whole grid, segmentation losses are disabled, and the reference is the
/// sole trusted frame or, when none is trusted, the last frame.
ConfidenceSelection select(std::span<const SegFrame> segs, double alpha, double gamma);

/// Reads the manifest's "segmentations" entries. Returns an empty list when
/// the manifest has none.
std::vector<SegFrame> load_segmentations(const std::filesystem::path &manifest_path);

} // namespace t1map
