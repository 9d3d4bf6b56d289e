#include "epsam/syndata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "epsam/errors.hpp"
#include "epsam/hash.hpp"
#include "epsam/image_io.hpp"
#include "epsam/parallel.hpp"
#include "epsam/rng.hpp"

namespace epsam {

namespace {

// Smooth value noise in [-1,1]: random lattice, bilinear interpolation.
Image value_noise(Rng& rng, int size, int cell) {
  const int grid = size / cell + 2;
  std::vector<double> lattice(static_cast<size_t>(grid) * grid);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  Image out(size, size);
  for (int y = 0; y < size; ++y) {
    double gy = static_cast<double>(y) / cell;
    int y0 = static_cast<int>(gy);
    double ty = gy - y0;
    for (int x = 0; x < size; ++x) {
      double gx = static_cast<double>(x) / cell;
      int x0 = static_cast<int>(gx);
      double tx = gx - x0;
      double a = lattice[static_cast<size_t>(y0) * grid + x0];
      double b = lattice[static_cast<size_t>(y0) * grid + x0 + 1];
      double c = lattice[static_cast<size_t>(y0 + 1) * grid + x0];
      double d = lattice[static_cast<size_t>(y0 + 1) * grid + x0 + 1];
      out.at(y, x) = (a * (1 - tx) + b * tx) * (1 - ty) +
                     (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

struct Blob {
  double cy, cx;      // centre in pixels
  double ry, rx;      // principal radii in pixels
  double cos_t, sin_t;
};

// Sum of elliptical bumps equal to 0.5 on each ellipse boundary, plus smooth
// noise to roughen the contour. The mask is field >= 0.5.
Image blob_field(Rng& rng, const SynParams& p) {
  const int s = p.size;
  const int n = rng.uniform_int(p.blob_min, p.blob_max);
  std::vector<Blob> blobs(n);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.25, 0.75) * s;
    b.cx = rng.uniform(0.25, 0.75) * s;
    // radius floor keeps single-blob patches able to reach the fraction floor
    b.rx = rng.uniform(0.22, 0.45) * s;
    b.ry = b.rx * rng.uniform(0.65, 1.0);
    double theta = rng.uniform(0.0, 3.14159265358979323846);
    b.cos_t = std::cos(theta);
    b.sin_t = std::sin(theta);
  }
  Image rough = value_noise(rng, s, std::max(4, s / 10));
  Image field(s, s);
  constexpr double kLn2 = 0.69314718055994530942;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double f = 0.0;
      for (const auto& b : blobs) {
        double dy = y - b.cy;
        double dx = x - b.cx;
        double u = (dx * b.cos_t + dy * b.sin_t) / b.rx;
        double v = (-dx * b.sin_t + dy * b.cos_t) / b.ry;
        f += std::exp(-kLn2 * (u * u + v * v));
      }
      field.at(y, x) = f + 0.18 * rough.at(y, x);
    }
  return field;
}

}  // namespace

std::pair<Patch, Mask> generate_patch(uint64_t seed, const SynParams& params,
                                      Label label, const std::string& id,
                                      const std::string& slide_id) {
  const int s = params.size;
  if (s < 8 || s % 4 != 0)
    throw ConfigError("patch size must be a multiple of 4 and >= 8, got " +
                      std::to_string(s));
  Rng rng(mix_seed(seed, "patch-gen"));

  // tissue background: pink-ish base with slow texture and per-pixel grain
  double base[3] = {rng.uniform(0.80, 0.90), rng.uniform(0.66, 0.76),
                    rng.uniform(0.76, 0.86)};
  Image tex = value_noise(rng, s, std::max(4, s / 8));
  Image grain(s, s);
  for (double& g : grain.v) g = rng.uniform(-1.0, 1.0);

  Mask mask(s, s, 0);
  Image field(s, s, 0.0);
  if (label == Label::positive) {
    bool accepted = false;
    for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
      Image candidate = blob_field(rng, params);
      size_t fg = 0;
      for (double f : candidate.v) fg += (f >= 0.5);
      double frac = static_cast<double>(fg) / candidate.v.size();
      if (frac >= params.fg_min && frac <= params.fg_max) {
        field = std::move(candidate);
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw GenerationError(
          "could not hit foreground-fraction range [" +
          std::to_string(params.fg_min) + ", " + std::to_string(params.fg_max) +
          "] after " + std::to_string(params.max_attempts) + " attempts");
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) mask.at(y, x) = field.at(y, x) >= 0.5 ? 1 : 0;
  }

  // tumor foreground: darker purple with finer texture
  double tumor[3] = {rng.uniform(0.50, 0.60), rng.uniform(0.30, 0.40),
                     rng.uniform(0.56, 0.66)};
  Image tumor_tex = value_noise(rng, s, std::max(2, s / 16));

  Patch patch;
  patch.id = id;
  patch.slide_id = slide_id;
  patch.label = label;
  patch.channels.assign(3, Image(s, s));
  const double soft = params.boundary_softness;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      // soft blend around the 0.5 level set; the mask itself stays crisp
      double alpha = 0.0;
      if (label == Label::positive) {
        alpha = 0.5 + (field.at(y, x) - 0.5) / (2.0 * soft);
        alpha = std::clamp(alpha, 0.0, 1.0);
      }
      for (int c = 0; c < 3; ++c) {
        double bg = base[c] + params.texture_noise * tex.at(y, x);
        double fg = tumor[c] + 1.5 * params.texture_noise * tumor_tex.at(y, x);
        double v = bg * (1.0 - alpha) + fg * alpha;
        v += 0.02 * grain.at(y, x);
        patch.channels[c].at(y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  return {std::move(patch), std::move(mask)};
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

std::vector<const ManifestEntry*> Manifest::split_positives(
    const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == name && e.label == Label::positive) out.push_back(&e);
  return out;
}

const ManifestEntry& Manifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw ConfigError("patch id not in manifest: " + id);
}

void Manifest::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["generator_seed"] = generator_seed;
  j["patch_size"] = patch_size;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"id", e.id},
                   {"split", e.split},
                   {"slide_id", e.slide_id},
                   {"label", label_name(e.label)},
                   {"patch_path", e.patch_path},
                   {"mask_path", e.mask_path}});
  }
  j["entries"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest: " + path.string());
  nlohmann::json j;
  in >> j;
  Manifest m;
  m.generator_seed = j.at("generator_seed").get<uint64_t>();
  m.patch_size = j.at("patch_size").get<int>();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.slide_id = je.at("slide_id").get<std::string>();
    e.label = label_from_name(je.at("label").get<std::string>());
    e.patch_path = je.at("patch_path").get<std::string>();
    e.mask_path = je.at("mask_path").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  m.root = path.parent_path();
  return m;
}

namespace {

// Largest-remainder apportionment of `slides` across the nonempty splits,
// each getting at least one slide.
std::vector<int> apportion_slides(const std::vector<int>& counts, int slides) {
  int nonempty = 0, total = 0;
  for (int c : counts) {
    nonempty += (c > 0);
    total += c;
  }
  if (nonempty == 0) throw ConfigError("no patches requested");
  if (slides < nonempty)
    throw ConfigError("need at least " + std::to_string(nonempty) +
                      " slides for " + std::to_string(nonempty) +
                      " nonempty splits, got " + std::to_string(slides));
  std::vector<int> alloc(counts.size(), 0);
  std::vector<double> remainder(counts.size(), 0.0);
  int assigned = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    double quota =
        static_cast<double>(slides) * counts[i] / static_cast<double>(total);
    alloc[i] = std::max(1, static_cast<int>(std::floor(quota)));
    remainder[i] = quota - std::floor(quota);
    assigned += alloc[i];
  }
  // largest remainder first; ties resolved by split order
  while (assigned < slides) {
    size_t best = counts.size();
    for (size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      if (best == counts.size() || remainder[i] > remainder[best]) best = i;
    }
    alloc[best] += 1;
    remainder[best] = -1.0;
    ++assigned;
  }
  while (assigned > slides) {
    size_t best = counts.size();
    for (size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0 || alloc[i] <= 1) continue;
      if (best == counts.size() || alloc[i] > alloc[best]) best = i;
    }
    if (best == counts.size())
      throw ConfigError("cannot apportion slides across splits");
    alloc[best] -= 1;
    --assigned;
  }
  return alloc;
}

}  // namespace

Manifest build_dataset(const DatasetParams& params, uint64_t seed,
                       const std::filesystem::path& out_dir, int workers) {
  const std::vector<std::string> split_names = {"train", "valid", "test"};
  const std::vector<int> counts = {params.train_count, params.valid_count,
                                   params.test_count};
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0)
      throw ConfigError("negative patch count for split " + split_names[i]);
    if (counts[i] % 2 != 0)
      throw ConfigError("split " + split_names[i] +
                        " count must be even for positive/negative balance");
  }
  std::vector<int> slide_alloc = apportion_slides(counts, params.slides);

  Manifest manifest;
  manifest.generator_seed = seed;
  manifest.patch_size = params.syn.size;
  manifest.root = out_dir;

  int slide_index = 0;
  int patch_index = 0;
  for (size_t si = 0; si < split_names.size(); ++si) {
    const int count = counts[si];
    if (count == 0) continue;
    const int nslides = slide_alloc[si];
    // contiguous run of patches per slide, spread as evenly as possible
    int base = count / nslides, extra = count % nslides;
    int in_split = 0;
    for (int k = 0; k < nslides; ++k) {
      int chunk = base + (k < extra ? 1 : 0);
      char slide_name[16];
      std::snprintf(slide_name, sizeof(slide_name), "s%03d", slide_index++);
      for (int i = 0; i < chunk; ++i, ++in_split) {
        ManifestEntry e;
        char id[16];
        std::snprintf(id, sizeof(id), "p%04d", patch_index++);
        e.id = id;
        e.split = split_names[si];
        e.slide_id = slide_name;
        e.label = (in_split % 2 == 0) ? Label::positive : Label::negative;
        e.patch_path = "patches/" + e.id + ".png";
        e.mask_path = "masks/" + e.id + "_gt.png";
        manifest.entries.push_back(std::move(e));
      }
    }
  }

  std::filesystem::create_directories(out_dir / "patches");
  std::filesystem::create_directories(out_dir / "masks");

  const int n = static_cast<int>(manifest.entries.size());
  std::vector<std::pair<Patch, Mask>> generated(n);
  parallel_for(n, workers, [&](int i) {
    const auto& e = manifest.entries[i];
    generated[i] = generate_patch(mix_seed(seed, static_cast<uint64_t>(i)),
                                  params.syn, e.label, e.id, e.slide_id);
  });
  for (int i = 0; i < n; ++i) {
    const auto& e = manifest.entries[i];
    save_patch_png(out_dir / e.patch_path, generated[i].first);
    save_mask_png(out_dir / e.mask_path, generated[i].second);
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

Patch load_patch(const Manifest& manifest, const ManifestEntry& entry) {
  Patch p;
  p.id = entry.id;
  p.slide_id = entry.slide_id;
  p.label = entry.label;
  p.channels = load_patch_channels(manifest.root / entry.patch_path);
  return p;
}

Mask load_ground_truth(const Manifest& manifest, const ManifestEntry& entry) {
  return load_mask_png(manifest.root / entry.mask_path);
}

}  // namespace epsam
