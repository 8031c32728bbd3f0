#include "dualseg/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dualseg/error.hpp"
#include "dualseg/volume_io.hpp"

namespace dualseg {
namespace {

namespace fs = std::filesystem;

Image extract_slice(const Volume& v, int z) {
  const std::size_t plane = static_cast<std::size_t>(v.dims.h) * v.dims.w;
  std::vector<float> values(v.slice(z), v.slice(z) + plane);
  return Image(v.dims.h, v.dims.w, std::move(values));
}

Mask extract_mask(const LabelVolume& v, int z) {
  const std::size_t plane = static_cast<std::size_t>(v.dims.h) * v.dims.w;
  std::vector<unsigned char> values(v.slice(z), v.slice(z) + plane);
  return Mask(v.dims.h, v.dims.w, std::move(values));
}

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// Appends `count` indices drawn from successive seeded permutations of [0, n).
std::vector<std::size_t> draw_stream(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  std::vector<std::size_t> perm(n);
  while (out.size() < count) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n && out.size() < count; ++i) out.push_back(perm[i]);
  }
  return out;
}

std::vector<SliceRecord> preprocess_patient(const MultiModalVolume& volume, std::pair<int, int> crop, bool keep_mask) {
  std::vector<SliceRecord> records;
  for (SliceEntry& entry : slice_and_filter(volume)) {
    SliceRecord r;
    r.patient_id = volume.patient_id;
    r.slice_index = entry.slice_index;
    r.image_a = center_crop(normalize_slice(entry.image_a), crop.first, crop.second);
    r.image_b = center_crop(normalize_slice(entry.image_b), crop.first, crop.second);
    if (keep_mask) r.mask = center_crop(entry.mask, crop.first, crop.second);
    r.labeled = keep_mask;
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

void MultiModalVolume::validate() const {
  if (!(modality_a.dims == modality_b.dims)) {
    throw Error(Errc::ShapeMismatch, patient_id + ": modality dims differ");
  }
  if (modality_a.values.size() != modality_a.dims.count() || modality_b.values.size() != modality_b.dims.count()) {
    throw Error(Errc::ShapeMismatch, patient_id + ": modality storage does not match dims");
  }
  if (label) {
    if (!(label->dims == modality_a.dims) || label->values.size() != label->dims.count()) {
      throw Error(Errc::ShapeMismatch, patient_id + ": label dims differ from modality dims");
    }
    if (std::any_of(label->values.begin(), label->values.end(), [](unsigned char v) { return v > 1; })) {
      throw Error(Errc::NonBinaryMask, patient_id + ": label values must be 0 or 1");
    }
  }
}

std::vector<SliceEntry> slice_and_filter(const MultiModalVolume& volume) {
  if (!volume.label) throw Error(Errc::MissingLabel, volume.patient_id + " has no label volume");
  volume.validate();
  const LabelVolume& label = *volume.label;
  const std::size_t plane = static_cast<std::size_t>(label.dims.h) * label.dims.w;

  std::vector<SliceEntry> out;
  for (int z = 0; z < label.dims.d; ++z) {
    const unsigned char* s = label.slice(z);
    if (std::none_of(s, s + plane, [](unsigned char v) { return v != 0; })) continue;
    out.push_back({z, extract_slice(volume.modality_a, z), extract_slice(volume.modality_b, z), extract_mask(label, z)});
  }
  return out;
}

Image normalize_slice(const Image& image) {
  Image out(image.h, image.w, 0.0f);
  const std::size_t n = image.values.size();
  if (n == 0) return out;
  double mean = 0.0;
  for (float v : image.values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : image.values) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / static_cast<double>(n));
  if (stddev < 1e-8) return out;
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>((image.values[i] - mean) / stddev);
  return out;
}

template <class T>
Grid2<T> center_crop(const Grid2<T>& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1 || out_h > image.h || out_w > image.w) {
    throw Error(Errc::CropLargerThanImage, "cannot crop " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                                               " to " + std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const int top = (image.h - out_h) / 2;
  const int left = (image.w - out_w) / 2;
  Grid2<T> out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    std::copy_n(&image.at(top + y, left), out_w, &out.at(y, 0));
  }
  return out;
}

template Grid2<float> center_crop(const Grid2<float>&, int, int);
template Grid2<unsigned char> center_crop(const Grid2<unsigned char>&, int, int);

DatasetSplit make_split(const std::vector<MultiModalVolume>& volumes, double label_fraction, std::uint64_t seed,
                        std::pair<int, int> crop) {
  if (volumes.size() < 2) throw Error(Errc::TooFewPatients, "need at least 2 patients, got " + std::to_string(volumes.size()));
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw Error(Errc::ConfigError, "label_fraction must be in (0, 1]");
  }

  std::mt19937_64 rng = seeded({seed, 0x5eedULL});
  std::vector<std::size_t> order(volumes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = volumes.size() * 8 / 10;
  const std::size_t n_test = volumes.size() - n_train;
  // Guard against 0.1 * 10 landing a hair above 1.
  const auto n_labeled = static_cast<std::size_t>(std::ceil(label_fraction * static_cast<double>(n_train) - 1e-9));
  if (n_train == 0 || n_test == 0 || n_labeled == 0) {
    throw Error(Errc::EmptySplit, std::to_string(volumes.size()) + " patients leave an empty labeled or test set");
  }

  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::shuffle(train.begin(), train.end(), rng);

  DatasetSplit split;
  split.label_fraction = label_fraction;
  split.seed = seed;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const MultiModalVolume& v = volumes[train[i]];
    const bool is_labeled = i < n_labeled;
    auto records = preprocess_patient(v, crop, is_labeled);
    auto& dst = is_labeled ? split.labeled : split.unlabeled;
    (is_labeled ? split.labeled_patients : split.unlabeled_patients).push_back(v.patient_id);
    std::move(records.begin(), records.end(), std::back_inserter(dst));
  }
  for (std::size_t i = n_train; i < order.size(); ++i) {
    const MultiModalVolume& v = volumes[order[i]];
    split.test_patients.push_back(v.patient_id);
    auto records = preprocess_patient(v, crop, true);
    std::move(records.begin(), records.end(), std::back_inserter(split.test));
  }
  if (split.labeled.empty() || split.test.empty()) {
    throw Error(Errc::EmptySplit, "labeled or test patients contribute no lesion slices");
  }
  return split;
}

std::vector<Batch> make_batches(const DatasetSplit& split, int batch_labeled, int batch_unlabeled, std::uint64_t seed,
                                std::uint64_t epoch) {
  if (batch_labeled < 1 || batch_unlabeled < 1) throw Error(Errc::ConfigError, "batch sizes must be >= 1");
  if (split.labeled.empty()) throw Error(Errc::EmptyLabeledSet, "no labeled records");

  const std::size_t nl = split.labeled.size();
  const std::size_t nu = split.unlabeled.size();
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  std::size_t n_batches = ceil_div(nl, static_cast<std::size_t>(batch_labeled));
  if (nu > 0) n_batches = std::max(n_batches, ceil_div(nu, static_cast<std::size_t>(batch_unlabeled)));

  std::mt19937_64 rng_l = seeded({seed, epoch, 1});
  std::mt19937_64 rng_u = seeded({seed, epoch, 2});
  const auto lab = draw_stream(nl, n_batches * batch_labeled, rng_l);
  const auto unl = nu > 0 ? draw_stream(nu, n_batches * batch_unlabeled, rng_u) : std::vector<std::size_t>{};

  std::vector<Batch> batches(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (int i = 0; i < batch_labeled; ++i) batches[b].labeled.push_back(&split.labeled[lab[b * batch_labeled + i]]);
    if (nu > 0) {
      for (int i = 0; i < batch_unlabeled; ++i) {
        batches[b].unlabeled.push_back(&split.unlabeled[unl[b * batch_unlabeled + i]]);
      }
    }
  }
  return batches;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> stack_images(const std::vector<const SliceRecord*>& records) {
  if (records.empty()) return {};
  const int h = records.front()->image_a.h;
  const int w = records.front()->image_a.w;
  const int n = static_cast<int>(records.size());
  Tensor<T> a({n, 1, h, w});
  Tensor<T> b({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    const SliceRecord& r = *records[i];
    if (r.image_a.h != h || r.image_a.w != w || r.image_b.h != h || r.image_b.w != w) {
      throw Error(Errc::ShapeMismatch, "records in one batch must share image dims");
    }
    std::copy(r.image_a.values.begin(), r.image_a.values.end(), a.sample(i));
    std::copy(r.image_b.values.begin(), r.image_b.values.end(), b.sample(i));
  }
  return {std::move(a), std::move(b)};
}

template std::pair<Tensor<float>, Tensor<float>> stack_images(const std::vector<const SliceRecord*>&);
template std::pair<Tensor<double>, Tensor<double>> stack_images(const std::vector<const SliceRecord*>&);

MaskBatch stack_masks(const std::vector<const SliceRecord*>& records) {
  MaskBatch out;
  if (records.empty()) return out;
  out.n = static_cast<int>(records.size());
  out.h = records.front()->image_a.h;
  out.w = records.front()->image_a.w;
  out.values.reserve(static_cast<std::size_t>(out.n) * out.h * out.w);
  for (const SliceRecord* r : records) {
    if (!r->mask) throw Error(Errc::EmptyLabeledBatch, r->patient_id + " slice " + std::to_string(r->slice_index) + " has no mask");
    out.values.insert(out.values.end(), r->mask->values.begin(), r->mask->values.end());
  }
  return out;
}

std::vector<MultiModalVolume> load_volume_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::ConfigError, "data_dir " + dir.string() + " does not exist");

  std::vector<std::string> ids;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    const auto j = nlohmann::json::parse(in);
    ids = j.at("patients").get<std::vector<std::string>>();
  } else {
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      for (const std::string suffix : {"_a.json", "_a.nii"}) {
        if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
      }
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  }
  if (ids.empty()) throw Error(Errc::ConfigError, "no patient volumes found in " + dir.string());

  auto read_any = [&](const std::string& stem) -> Volume {
    const fs::path nii = dir / (stem + ".nii");
    if (fs::exists(nii)) return read_nifti1(nii).voxels;
    const fs::path gz = dir / (stem + ".nii.gz");
    if (fs::exists(gz)) return read_nifti1(gz).voxels;
    return read_portable(dir / stem).voxels;
  };

  std::vector<MultiModalVolume> volumes;
  for (const std::string& id : ids) {
    MultiModalVolume v;
    v.patient_id = id;
    v.modality_a = read_any(id + "_a");
    v.modality_b = read_any(id + "_b");
    const bool has_label = fs::exists(dir / (id + "_label.json")) || fs::exists(dir / (id + "_label.nii")) ||
                           fs::exists(dir / (id + "_label.nii.gz"));
    if (has_label) {
      const Volume lab = read_any(id + "_label");
      LabelVolume label(lab.dims);
      for (std::size_t i = 0; i < lab.values.size(); ++i) label.values[i] = lab.values[i] > 0.5f ? 1 : 0;
      v.label = std::move(label);
    }
    v.validate();
    volumes.push_back(std::move(v));
  }
  return volumes;
}

void save_volume_dir(const std::vector<MultiModalVolume>& volumes, const fs::path& dir,
                     const nlohmann::json& extra_manifest) {
  fs::create_directories(dir);
  nlohmann::json manifest = extra_manifest.is_object() ? extra_manifest : nlohmann::json::object();
  std::vector<std::string> ids;
  for (const MultiModalVolume& v : volumes) {
    write_portable(v.modality_a, dir / (v.patient_id + "_a"));
    write_portable(v.modality_b, dir / (v.patient_id + "_b"));
    if (v.label) {
      Volume lab(v.label->dims);
      std::transform(v.label->values.begin(), v.label->values.end(), lab.values.begin(),
                     [](unsigned char x) { return static_cast<float>(x); });
      write_portable(lab, dir / (v.patient_id + "_label"));
    }
    ids.push_back(v.patient_id);
  }
  manifest["patients"] = ids;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

nlohmann::json split_manifest(const DatasetSplit& split) {
  auto entries = [](const std::vector<SliceRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SliceRecord& r : records) {
      arr.push_back({{"patient_id", r.patient_id}, {"slice_index", r.slice_index}, {"labeled", r.labeled}});
    }
    return arr;
  };
  return {{"seed", split.seed},
          {"label_fraction", split.label_fraction},
          {"patients",
           {{"labeled", split.labeled_patients},
            {"unlabeled", split.unlabeled_patients},
            {"test", split.test_patients}}},
          {"labeled", entries(split.labeled)},
          {"unlabeled", entries(split.unlabeled)},
          {"test", entries(split.test)}};
}

}  // namespace dualseg
