#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "synseg/data.hpp"
#include "synseg/phantom.hpp"

namespace synseg {

namespace fs = std::filesystem;

// Raised for unreadable, malformed or inconsistent data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Records every path opened for reading through open_for_read() while
// enabled. Used to audit that training never touches evaluation labels.
class FileAccessAudit {
 public:
  static void enable();
  static void disable();
  static void clear();
  static std::vector<std::string> paths();
  static void record(const fs::path& path);
};

std::ifstream open_for_read(const fs::path& path, bool binary = true);

// Binary PGM (P5), 16-bit big-endian samples, maxval 65535.
struct Pgm16 {
  int height = 0;
  int width = 0;
  std::vector<uint16_t> samples;
};

void write_pgm16(const fs::path& path, const Pgm16& image, const std::string& comment = {});
Pgm16 read_pgm16(const fs::path& path);

uint16_t intensity_to_sample(float v);
float sample_to_intensity(uint16_t s);

// One manifest line: scan_id,modality,slice_path,label_path,row_mm,col_mm
// (label_path empty when unlabeled; paths relative to the dataset root).
struct ManifestRecord {
  std::string scan_id;
  Modality modality = Modality::source;
  std::string slice_path;
  std::string label_path;
  Spacing spacing;
};

std::vector<ManifestRecord> read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records);

// Dataset directory layout.
inline constexpr const char* kManifestSourceTrain = "manifest_source_train.csv";
inline constexpr const char* kManifestSourceVal = "manifest_source_val.csv";
inline constexpr const char* kManifestTargetTrain = "manifest_target_train.csv";
inline constexpr const char* kEvalDir = "eval_only";
inline constexpr const char* kManifestTargetEval = "eval_only/manifest_target_eval.csv";
inline constexpr const char* kManifestSupervisedTrain = "eval_only/manifest_target_supervised_train.csv";
inline constexpr const char* kManifestSupervisedVal = "eval_only/manifest_target_supervised_val.csv";
inline constexpr const char* kDatasetInfo = "dataset.txt";

// Writes PGM slices and manifests; target labels go under eval_only/ only.
void write_dataset(const fs::path& root, const PhantomDataset& dataset, const PhantomSpec& spec);

// Loads the scans listed in one manifest (labels loaded when present).
std::vector<Scan> load_split(const fs::path& root, const std::string& manifest, int n_classes);

struct DatasetInfo {
  int image_size = 0;
  int n_classes = 0;
  uint64_t manifest_hash = 0;  // FNV-1a over all training/eval manifest bytes
};

DatasetInfo read_dataset_info(const fs::path& root);

// Writes via a temporary file and rename.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_text_file(const fs::path& path);

}  // namespace synseg
