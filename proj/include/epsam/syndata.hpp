#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "epsam/image.hpp"

namespace epsam {

// Generator knobs for one synthetic tumor-on-tissue patch.
struct SynParams {
  int size = 64;              // square side, multiple of 4
  int blob_min = 1;
  int blob_max = 4;
  double fg_min = 0.20;       // target foreground-fraction range for positives
  double fg_max = 0.90;
  double texture_noise = 0.08;
  double boundary_softness = 0.15;  // field-space half-width of the soft edge
  int max_attempts = 200;
};

// Deterministic for fixed (seed, params, label). Positive patches carry 1-4
// smooth blobs with soft image boundaries; the mask is the exact field
// threshold. Throws GenerationError when the foreground-fraction range cannot
// be hit within max_attempts.
std::pair<Patch, Mask> generate_patch(uint64_t seed, const SynParams& params,
                                      Label label,
                                      const std::string& id = "patch",
                                      const std::string& slide_id = "slide");

struct ManifestEntry {
  std::string id;
  std::string split;  // train | valid | test
  std::string slide_id;
  Label label = Label::negative;
  std::string patch_path;  // relative to the manifest directory
  std::string mask_path;
};

struct Manifest {
  uint64_t generator_seed = 0;
  int patch_size = 0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory of the manifest file; not serialized

  std::vector<const ManifestEntry*> split(const std::string& name) const;
  std::vector<const ManifestEntry*> split_positives(const std::string& name) const;
  const ManifestEntry& find(const std::string& id) const;

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

struct DatasetParams {
  SynParams syn;
  int train_count = 64;  // per-split totals; must be even for balance
  int valid_count = 16;
  int test_count = 32;
  int slides = 12;
};

// Generates all patches and masks under out_dir and writes manifest.json.
// Slides are partitioned across splits before patch assignment; positives and
// negatives are balanced within each split.
Manifest build_dataset(const DatasetParams& params, uint64_t seed,
                       const std::filesystem::path& out_dir, int workers = 1);

Patch load_patch(const Manifest& manifest, const ManifestEntry& entry);
Mask load_ground_truth(const Manifest& manifest, const ManifestEntry& entry);

}  // namespace epsam
