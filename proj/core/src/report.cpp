#include "synseg/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "synseg/tensor.hpp"
#include "synseg/training.hpp"

namespace synseg {

namespace {

std::string fmt(double v, const char* f = "%.9g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::vector<MetricsRecord> evaluate_segmenter(const Network& seg, const std::vector<Scan>& scans, int n_classes,
                                              const std::string& variant, int epoch, double slice_thickness_mm) {
  std::vector<MetricsRecord> out;
  for (const auto& scan : scans) {
    if (scan.labels.size() != scan.slices.size()) throw DataError("scan " + scan.scan_id + " has no labels to score");
    const auto pred = segment_slices(seg, scan.slices, n_classes);
    for (int c = 1; c < n_classes; ++c) {
      MetricsRecord r;
      r.subject_id = scan.scan_id;
      r.variant = variant;
      r.epoch = epoch;
      r.class_id = c;
      r.dsc = dice(pred, scan.labels, c);
      r.asd_mm = asd(pred, scan.labels, c, scan.slices.front().spacing, slice_thickness_mm);
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_results_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records,
                       const std::vector<std::string>& comments) {
  std::string s;
  for (const auto& c : comments) s += "# " + c + "\n";
  s += "subject_id,variant,epoch,class,dsc,asd_mm\n";
  for (const auto& r : records) {
    s += r.subject_id + "," + r.variant + "," + std::to_string(r.epoch) + "," + std::to_string(r.class_id) + "," +
         fmt(r.dsc, "%.17g") + "," + (r.asd_mm ? fmt(*r.asd_mm, "%.17g") : "") + "\n";
  }
  write_file_atomic(path, s);
}

std::vector<MetricsRecord> read_results_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.starts_with("subject_id,")) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw DataError(path.string() + ": malformed results row");
    MetricsRecord r;
    r.subject_id = f[0];
    r.variant = f[1];
    r.epoch = std::stoi(f[2]);
    r.class_id = std::stoi(f[3]);
    r.dsc = std::stod(f[4]);
    if (!f[5].empty()) r.asd_mm = std::stod(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> variants_in(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> v;
  for (const auto& r : records) {
    if (std::find(v.begin(), v.end(), r.variant) == v.end()) v.push_back(r.variant);
  }
  return v;
}

PairwiseTest compare_variants(const std::vector<MetricsRecord>& records, const std::string& a, const std::string& b,
                              int class_id) {
  std::map<std::string, double> da, db;
  for (const auto& r : records) {
    if (r.class_id != class_id) continue;
    if (r.variant == a) da[r.subject_id] = r.dsc;
    if (r.variant == b) db[r.subject_id] = r.dsc;
  }
  std::vector<double> xa, xb;
  for (const auto& [subject, v] : da) {
    if (const auto it = db.find(subject); it != db.end()) {
      xa.push_back(v);
      xb.push_back(it->second);
    }
  }
  PairwiseTest t;
  t.a = a;
  t.b = b;
  t.n_pairs = static_cast<int>(xa.size());
  if (!xa.empty()) t.result = wilcoxon_signed_rank(xa, xb);
  return t;
}

std::string comparison_report(const std::vector<MetricsRecord>& records, int class_id,
                              const std::vector<std::string>& header_lines) {
  std::ostringstream os;
  for (const auto& h : header_lines) os << "# " << h << "\n";
  os << "class " << class_id << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %5s %11s %17s %11s %17s\n", "Variant", "n", "Median DSC", "Mean±Std DSC",
                "Median ASD", "Mean±Std ASD");
  os << line;
  const auto variants = variants_in(records);
  for (const auto& v : variants) {
    std::vector<double> dsc, asd_mm;
    for (const auto& r : records) {
      if (r.variant != v || r.class_id != class_id) continue;
      dsc.push_back(r.dsc);
      if (r.asd_mm) asd_mm.push_back(*r.asd_mm);
    }
    if (dsc.empty()) continue;
    const Summary d = summarize(dsc);
    std::string asd_median = "n/a", asd_mean = "n/a";
    if (!asd_mm.empty()) {
      const Summary a = summarize(asd_mm);
      asd_median = fmt(a.median, "%.3f");
      asd_mean = fmt(a.mean, "%.3f") + "±" + fmt(a.std, "%.3f");
    }
    std::snprintf(line, sizeof line, "%-12s %5zu %11.4f %17s %11s %17s\n", v.c_str(), d.n, d.median,
                  (fmt(d.mean, "%.4f") + "±" + fmt(d.std, "%.4f")).c_str(), asd_median.c_str(), asd_mean.c_str());
    os << line;
    if (asd_mm.size() < dsc.size()) {
      os << "  note: ASD undefined (empty mask) for " << dsc.size() - asd_mm.size() << " subject(s) of " << v << "\n";
    }
  }
  if (variants.size() >= 2) {
    os << "\nWilcoxon signed-rank on per-subject DSC (two-sided, * = p < 0.05)\n";
    for (size_t i = 0; i < variants.size(); ++i) {
      for (size_t j = i + 1; j < variants.size(); ++j) {
        const PairwiseTest t = compare_variants(records, variants[i], variants[j], class_id);
        std::snprintf(line, sizeof line, "%-12s vs %-12s pairs=%-4d W=%-9.1f p=%-11.4g %s%s\n", t.a.c_str(),
                      t.b.c_str(), t.n_pairs, t.result.statistic, t.result.p_two_sided,
                      t.significant() ? "*" : "N.S.", t.result.exact ? "" : " (normal approx.)");
        os << line;
      }
    }
  }
  return os.str();
}

Pgm16 tile_montage(const std::vector<std::vector<std::vector<float>>>& rows, int size) {
  Pgm16 img;
  if (rows.empty()) return img;
  const size_t cols = rows.front().size();
  img.width = static_cast<int>(cols) * size;
  img.height = static_cast<int>(rows.size()) * size;
  img.samples.assign(static_cast<size_t>(img.width) * img.height, 0);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("montage rows differ in tile count");
    for (size_t c = 0; c < cols; ++c) {
      const auto& tile = rows[r][c];
      if (tile.size() != static_cast<size_t>(size) * size) throw ShapeError("montage tile has the wrong size");
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const size_t dst = (r * size + y) * static_cast<size_t>(img.width) + c * size + x;
          img.samples[dst] = intensity_to_sample(tile[static_cast<size_t>(y) * size + x]);
        }
      }
    }
  }
  return img;
}

}  // namespace synseg
