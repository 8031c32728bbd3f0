#include "dualseg/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualseg/error.hpp"
#include "dualseg/volume_io.hpp"

namespace dualseg {

Confusion confusion(std::span<const unsigned char> pred, std::span<const unsigned char> gt) {
  if (pred.size() != gt.size()) {
    throw Error(Errc::ShapeMismatch, "masks differ in size: " + std::to_string(pred.size()) + " vs " +
                                         std::to_string(gt.size()));
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || gt[i] > 1) throw Error(Errc::NonBinary, "mask values must be 0 or 1");
    if (pred[i] && gt[i]) {
      ++c.tp;
    } else if (pred[i]) {
      ++c.fp;
    } else if (gt[i]) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double dice_from(const Confusion& c) {
  const long long denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double sensitivity_from(const Confusion& c) {
  const long long positives = c.tp + c.fn;
  return positives == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(positives);
}

double dice_score(std::span<const unsigned char> pred, std::span<const unsigned char> gt) {
  return dice_from(confusion(pred, gt));
}

double sensitivity(std::span<const unsigned char> pred, std::span<const unsigned char> gt) {
  return sensitivity_from(confusion(pred, gt));
}

namespace {
void check_mask_dims(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) throw Error(Errc::ShapeMismatch, "mask dims differ");
}
}  // namespace

double dice_score(const Mask& pred, const Mask& gt) {
  check_mask_dims(pred, gt);
  return dice_score(std::span<const unsigned char>(pred.values), std::span<const unsigned char>(gt.values));
}

double sensitivity(const Mask& pred, const Mask& gt) {
  check_mask_dims(pred, gt);
  return sensitivity(std::span<const unsigned char>(pred.values), std::span<const unsigned char>(gt.values));
}

std::vector<Mask> fuse_predictions(const Tensor<float>& probs_a, const Tensor<float>& probs_b) {
  probs_a.require_same(probs_b, "fuse_predictions");
  const std::size_t hw = probs_a.shape().plane();
  std::vector<Mask> out;
  for (int n = 0; n < probs_a.n(); ++n) {
    Mask m(probs_a.h(), probs_a.w());
    for (std::size_t i = 0; i < hw; ++i) {
      int best = 0;
      double best_p = -1.0;
      for (int c = 0; c < probs_a.c(); ++c) {
        const double p = (static_cast<double>(probs_a.plane(n, c)[i]) + probs_b.plane(n, c)[i]) / 2.0;
        if (p > best_p) {
          best_p = p;
          best = c;
        }
      }
      m.values[i] = best == 1 ? 1 : 0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Mask> predict_masks(DualBranchNet<float>& net, const std::vector<SliceRecord>& records, int batch_size) {
  std::vector<Mask> out;
  out.reserve(records.size());
  for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
    const std::size_t end = std::min(records.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const SliceRecord*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&records[i]);
    auto [a, b] = stack_images<float>(chunk);
    DualPrediction<float> pred = net.forward(a, b, Mode::Infer);
    for (Mask& m : fuse_predictions(pred.probs_a, pred.probs_b)) out.push_back(std::move(m));
  }
  return out;
}

MetricReport aggregate_metrics(const std::vector<SliceRecord>& records, const std::vector<Mask>& predictions) {
  if (records.empty()) throw Error(Errc::EmptyTestSet, "no records to evaluate");
  if (records.size() != predictions.size()) throw Error(Errc::ShapeMismatch, "one prediction per record required");

  std::map<std::string, Confusion> pooled;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SliceRecord& r = records[i];
    if (!r.mask) throw Error(Errc::EmptyTestSet, r.patient_id + " slice " + std::to_string(r.slice_index) + " has no mask");
    check_mask_dims(predictions[i], *r.mask);
    const Confusion c = confusion(predictions[i].values, r.mask->values);
    Confusion& acc = pooled[r.patient_id];
    acc.tp += c.tp;
    acc.fp += c.fp;
    acc.fn += c.fn;
    acc.tn += c.tn;
  }

  MetricReport report;
  for (const auto& [pid, c] : pooled) {
    const PatientMetrics m{dice_from(c), sensitivity_from(c)};
    report.per_patient[pid] = m;
    report.mean_dice += m.dice;
    report.mean_sens += m.sens;
  }
  report.n_patients = static_cast<int>(pooled.size());
  report.mean_dice /= report.n_patients;
  report.mean_sens /= report.n_patients;
  return report;
}

MetricReport evaluate(DualBranchNet<float>& net, const std::vector<SliceRecord>& records) {
  if (records.empty()) throw Error(Errc::EmptyTestSet, "no records to evaluate");
  return aggregate_metrics(records, predict_masks(net, records));
}

void predict_patient(DualBranchNet<float>& net, const std::vector<SliceRecord>& records,
                     const std::filesystem::path& out_dir) {
  if (records.empty()) return;
  std::filesystem::create_directories(out_dir);
  const std::vector<Mask> preds = predict_masks(net, records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SliceRecord& r = records[i];
    const std::string stem = r.patient_id + "_" + std::to_string(r.slice_index);
    write_mask_pgm(preds[i], out_dir / (stem + "_pred.pgm"));
    write_mask_pgm(r.mask ? *r.mask : Mask(r.image_a.h, r.image_a.w), out_dir / (stem + "_gt.pgm"));
  }
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [pid, m] : r.per_patient) per[pid] = {{"dice", m.dice}, {"sens", m.sens}};
  j = {{"per_patient", per}, {"mean_dice", r.mean_dice}, {"mean_sens", r.mean_sens}, {"n_patients", r.n_patients}};
}

void to_json(nlohmann::json& j, const AblationResult& r) {
  j = nlohmann::json::array();
  for (const AblationRow& row : r.rows) {
    j.push_back({{"enable_mem", row.enable_mem}, {"enable_cif", row.enable_cif}, {"dice", row.dice}, {"sens", row.sens}});
  }
}

std::string format_ablation_table(const AblationResult& r) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-9s %-5s %-5s %-8s %-8s\n", "Baseline", "MEM", "CIF", "Dice", "Sens");
  os << line << std::string(39, '-') << '\n';
  for (const AblationRow& row : r.rows) {
    std::snprintf(line, sizeof line, "%-9s %-5s %-5s %-8.4f %-8.4f\n", "x", row.enable_mem ? "x" : "", row.enable_cif ? "x" : "",
                  row.dice, row.sens);
    os << line;
  }
  return os.str();
}

std::string format_metric_table(const MetricReport& r) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %-8s %-8s\n", "patient", "DSC", "Sens");
  os << line << std::string(30, '-') << '\n';
  for (const auto& [pid, m] : r.per_patient) {
    std::snprintf(line, sizeof line, "%-12s %-8.4f %-8.4f\n", pid.c_str(), m.dice, m.sens);
    os << line;
  }
  os << std::string(30, '-') << '\n';
  std::snprintf(line, sizeof line, "%-12s %-8.4f %-8.4f\n", "mean", r.mean_dice, r.mean_sens);
  os << line;
  return os.str();
}

}  // namespace dualseg
