#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "synseg/dataset_io.hpp"
#include "synseg/metrics.hpp"
#include "synseg/networks.hpp"

namespace synseg {

// Per-subject DSC and ASD for every foreground class of a segmenter on
// preprocessed, labeled scans.
std::vector<MetricsRecord> evaluate_segmenter(const Network& seg, const std::vector<Scan>& scans, int n_classes,
                                              const std::string& variant, int epoch, double slice_thickness_mm);

// subject_id,variant,epoch,class,dsc,asd_mm (asd_mm empty when undefined),
// preceded by "# key=value" comment lines.
void write_results_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records,
                       const std::vector<std::string>& comments = {});
std::vector<MetricsRecord> read_results_csv(const std::filesystem::path& path);

struct PairwiseTest {
  std::string a, b;
  int n_pairs = 0;
  WilcoxonResult result;
  bool significant() const { return result.p_two_sided < 0.05; }
};

// Wilcoxon signed-rank on DSC of `class_id`, paired by subject_id.
PairwiseTest compare_variants(const std::vector<MetricsRecord>& records, const std::string& a, const std::string& b,
                              int class_id);

// Variants in first-appearance order.
std::vector<std::string> variants_in(const std::vector<MetricsRecord>& records);

// Median DSC, Mean±Std DSC, Median ASD, Mean±Std ASD per variant for one
// class, then every pairwise DSC comparison marked "*" (p < 0.05) or "N.S.".
std::string comparison_report(const std::vector<MetricsRecord>& records, int class_id,
                              const std::vector<std::string>& header_lines = {});

// Tiled grayscale rows, one row per sample, each tile size x size.
Pgm16 tile_montage(const std::vector<std::vector<std::vector<float>>>& rows, int size);

}  // namespace synseg
