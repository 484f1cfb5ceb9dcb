#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synseg/data.hpp"

namespace synseg {

// 2|A∩B| / (|A|+|B|) over the binary masks of class_id; 1.0 if both empty.
double dice(const LabelMap& pred, const LabelMap& truth, int class_id);

// Same, pooled over a stack of slices (one subject).
double dice(std::span<const LabelMap> pred, std::span<const LabelMap> truth, int class_id);

// Boundary pixels: foreground with at least one background 4-neighbour,
// the image border counting as background.
std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& mask, int class_id);

// Symmetric average surface distance in mm. nullopt (with a warning)
// when either mask is empty.
std::optional<double> asd(const LabelMap& pred, const LabelMap& truth, int class_id, Spacing spacing);

// Subject-level ASD: boundary points of all slices are pooled and
// distances are measured in 3-D with the given slice thickness.
std::optional<double> asd(std::span<const LabelMap> pred, std::span<const LabelMap> truth, int class_id,
                          Spacing spacing, double slice_thickness_mm);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_two_sided = 1.0;
  int n = 0;               // after dropping zero differences
  bool exact = false;
};

inline constexpr int kWilcoxonExactMaxN = 20;

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// Mid-ranks (1-based) of |d| for the given nonzero differences.
std::vector<double> signed_rank_midranks(std::span<const double> abs_diffs);

struct Summary {
  double median = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population
  size_t n = 0;
};

Summary summarize(std::vector<double> values);

struct MetricsRecord {
  std::string subject_id;
  std::string variant;
  int epoch = 0;
  int class_id = 1;
  double dsc = 0.0;
  std::optional<double> asd_mm;
};

}  // namespace synseg
