#include "synseg/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include "synseg/rng.hpp"

namespace synseg {

namespace {

std::mutex g_audit_mutex;
bool g_audit_enabled = false;
std::vector<std::string> g_audit_paths;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

void FileAccessAudit::enable() {
  std::lock_guard lock(g_audit_mutex);
  g_audit_enabled = true;
}

void FileAccessAudit::disable() {
  std::lock_guard lock(g_audit_mutex);
  g_audit_enabled = false;
}

void FileAccessAudit::clear() {
  std::lock_guard lock(g_audit_mutex);
  g_audit_paths.clear();
}

std::vector<std::string> FileAccessAudit::paths() {
  std::lock_guard lock(g_audit_mutex);
  return g_audit_paths;
}

void FileAccessAudit::record(const fs::path& path) {
  std::lock_guard lock(g_audit_mutex);
  if (g_audit_enabled) g_audit_paths.push_back(fs::weakly_canonical(path).string());
}

std::ifstream open_for_read(const fs::path& path, bool binary) {
  FileAccessAudit::record(path);
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::string read_text_file(const fs::path& path) {
  auto in = open_for_read(path, true);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

uint16_t intensity_to_sample(float v) {
  return static_cast<uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
}

float sample_to_intensity(uint16_t s) { return static_cast<float>(s) / 65535.0f; }

void write_pgm16(const fs::path& path, const Pgm16& image, const std::string& comment) {
  if (image.samples.size() != static_cast<size_t>(image.height) * image.width) {
    throw DataError("PGM sample count does not match its size");
  }
  std::string bytes = "P5\n";
  if (!comment.empty()) bytes += "# " + comment + "\n";
  bytes += std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  bytes.reserve(bytes.size() + image.samples.size() * 2);
  for (const uint16_t s : image.samples) {
    bytes.push_back(static_cast<char>(s >> 8));
    bytes.push_back(static_cast<char>(s & 0xff));
  }
  write_file_atomic(path, bytes);
}

Pgm16 read_pgm16(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P5") throw DataError(path.string() + ": not a binary PGM");
  Pgm16 img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 65535) throw DataError(path.string() + ": expected maxval 65535");
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  ++pos;  // single whitespace before the raster
  const size_t count = static_cast<size_t>(img.width) * img.height;
  if (img.width <= 0 || img.height <= 0 || bytes.size() < pos + 2 * count) {
    throw DataError(path.string() + ": truncated PGM raster");
  }
  img.samples.resize(count);
  for (size_t i = 0; i < count; ++i) {
    img.samples[i] = static_cast<uint16_t>((static_cast<uint8_t>(bytes[pos + 2 * i]) << 8) |
                                           static_cast<uint8_t>(bytes[pos + 2 * i + 1]));
  }
  return img;
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    ManifestRecord r;
    r.scan_id = f[0];
    try {
      r.modality = parse_modality(f[1]);
      r.spacing = {std::stof(f[4]), std::stof(f[5])};
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    r.slice_path = f[2];
    r.label_path = f[3];
    if (!(r.spacing.row_mm > 0.0f && r.spacing.col_mm > 0.0f)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": spacing must be positive");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& r : records) {
    os << r.scan_id << ',' << modality_name(r.modality) << ',' << r.slice_path << ',' << r.label_path << ','
       << r.spacing.row_mm << ',' << r.spacing.col_mm << '\n';
  }
  write_file_atomic(path, os.str());
}

namespace {

std::vector<ManifestRecord> write_scans(const fs::path& root, const std::vector<Scan>& scans,
                                        const std::string& image_dir, const std::string& label_dir,
                                        bool with_labels) {
  std::vector<ManifestRecord> records;
  for (const auto& scan : scans) {
    for (size_t z = 0; z < scan.slices.size(); ++z) {
      const auto& img = scan.slices[z];
      const std::string stem = scan.scan_id + "/slice_" + (z < 10 ? "0" : "") + std::to_string(z) + ".pgm";
      ManifestRecord r;
      r.scan_id = scan.scan_id;
      r.modality = scan.modality;
      r.spacing = img.spacing;
      r.slice_path = image_dir + "/" + stem;
      Pgm16 pgm{img.height, img.width, {}};
      pgm.samples.reserve(img.pixels.size());
      for (const float v : img.pixels) pgm.samples.push_back(intensity_to_sample(v));
      write_pgm16(root / r.slice_path, pgm);
      if (with_labels) {
        const auto& lab = scan.labels.at(z);
        r.label_path = label_dir + "/" + stem;
        Pgm16 lp{lab.height, lab.width, {}};
        for (const int32_t c : lab.classes) lp.samples.push_back(static_cast<uint16_t>(c));
        write_pgm16(root / r.label_path, lp);
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

}  // namespace

void write_dataset(const fs::path& root, const PhantomDataset& ds, const PhantomSpec& spec) {
  fs::create_directories(root);
  write_manifest(root / kManifestSourceTrain, write_scans(root, ds.source_train, "source", "source_labels", true));
  write_manifest(root / kManifestSourceVal, write_scans(root, ds.source_val, "source", "source_labels", true));
  write_manifest(root / kManifestTargetTrain, write_scans(root, ds.target_train, "target", "", false));

  // Target labels (and anything only the supervised baseline may see).
  auto eval_records = write_scans(root, ds.eval.target_eval, "target", std::string(kEvalDir) + "/target_labels", true);
  write_manifest(root / kManifestTargetEval, eval_records);
  write_manifest(root / kManifestSupervisedTrain,
                 write_scans(root, ds.eval.supervised_train, std::string(kEvalDir) + "/supervised",
                             std::string(kEvalDir) + "/supervised_labels", true));
  write_manifest(root / kManifestSupervisedVal,
                 write_scans(root, ds.eval.supervised_val, std::string(kEvalDir) + "/supervised",
                             std::string(kEvalDir) + "/supervised_labels", true));

  uint64_t h = fnv1a64("");
  for (const char* m : {kManifestSourceTrain, kManifestSourceVal, kManifestTargetTrain, kManifestTargetEval,
                        kManifestSupervisedTrain, kManifestSupervisedVal}) {
    h = fnv1a64(read_text_file(root / m), h);
  }
  std::ostringstream info;
  info << "# synthetic two-modality phantom dataset\n"
       << "manifest_hash=" << h << "\n"
       << spec.canonical();
  write_file_atomic(root / kDatasetInfo, info.str());
}

std::vector<Scan> load_split(const fs::path& root, const std::string& manifest, int n_classes) {
  const auto records = read_manifest(root / manifest);
  std::vector<Scan> scans;
  std::map<std::string, size_t> index;
  for (const auto& r : records) {
    auto it = index.find(r.scan_id);
    if (it == index.end()) {
      it = index.emplace(r.scan_id, scans.size()).first;
      Scan s;
      s.scan_id = r.scan_id;
      s.modality = r.modality;
      scans.push_back(std::move(s));
    }
    Scan& scan = scans[it->second];
    const Pgm16 pgm = read_pgm16(root / r.slice_path);
    IntensityImage img;
    img.height = pgm.height;
    img.width = pgm.width;
    img.modality = r.modality;
    img.spacing = r.spacing;
    img.scan_id = r.scan_id;
    img.slice_index = static_cast<int>(scan.slices.size());
    img.pixels.reserve(pgm.samples.size());
    for (const uint16_t s : pgm.samples) img.pixels.push_back(sample_to_intensity(s));
    scan.slices.push_back(std::move(img));
    if (!r.label_path.empty()) {
      const Pgm16 lp = read_pgm16(root / r.label_path);
      if (lp.height != pgm.height || lp.width != pgm.width) throw DataError("label/image size mismatch for " + r.label_path);
      LabelMap lab;
      lab.height = lp.height;
      lab.width = lp.width;
      lab.n_classes = n_classes;
      lab.spacing = r.spacing;
      lab.classes.assign(lp.samples.begin(), lp.samples.end());
      try {
        lab.validate();
      } catch (const std::invalid_argument& e) {
        throw DataError(r.label_path + ": " + e.what());
      }
      scan.labels.push_back(std::move(lab));
    }
  }
  for (const auto& s : scans) {
    if (!s.labels.empty() && s.labels.size() != s.slices.size()) {
      throw DataError("scan " + s.scan_id + " is only partially labeled");
    }
  }
  return scans;
}

DatasetInfo read_dataset_info(const fs::path& root) {
  std::istringstream in(read_text_file(root / kDatasetInfo));
  DatasetInfo info;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "manifest_hash") info.manifest_hash = std::stoull(value);
    if (key == "image_size") info.image_size = std::stoi(value);
    if (key == "n_classes") info.n_classes = std::stoi(value);
  }
  if (info.image_size <= 0 || info.n_classes <= 0) throw DataError("incomplete dataset.txt in " + root.string());
  return info;
}

}  // namespace synseg
