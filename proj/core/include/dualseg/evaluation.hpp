#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dualseg/data_pipeline.hpp"
#include "dualseg/network.hpp"

namespace dualseg {

struct PatientMetrics {
  double dice = 0.0;
  double sens = 0.0;
  friend bool operator==(const PatientMetrics&, const PatientMetrics&) = default;
};

struct MetricReport {
  std::map<std::string, PatientMetrics> per_patient;
  double mean_dice = 0.0;
  double mean_sens = 0.0;
  int n_patients = 0;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

void to_json(nlohmann::json& j, const MetricReport& r);

struct Confusion {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;
};

/// Counts over two equally sized binary masks; NonBinary / ShapeMismatch.
Confusion confusion(std::span<const unsigned char> pred, std::span<const unsigned char> gt);

/// 2|P & G| / (|P| + |G|); 1 when both are empty.
double dice_score(std::span<const unsigned char> pred, std::span<const unsigned char> gt);
double dice_score(const Mask& pred, const Mask& gt);

/// TP / (TP + FN); 1 when the ground truth is empty.
double sensitivity(std::span<const unsigned char> pred, std::span<const unsigned char> gt);
double sensitivity(const Mask& pred, const Mask& gt);

double dice_from(const Confusion& c);
double sensitivity_from(const Confusion& c);

/// Per-pixel argmax of (probs_a + probs_b) / 2, one mask per sample.
std::vector<Mask> fuse_predictions(const Tensor<float>& probs_a, const Tensor<float>& probs_b);

/// Inference-mode predictions for each record, in order.
std::vector<Mask> predict_masks(DualBranchNet<float>& net, const std::vector<SliceRecord>& records,
                                int batch_size = 16);

/// Per patient, pools every slice's pixels into one Dice / Sensitivity, then
/// averages over patients (unweighted).
MetricReport aggregate_metrics(const std::vector<SliceRecord>& records, const std::vector<Mask>& predictions);

MetricReport evaluate(DualBranchNet<float>& net, const std::vector<SliceRecord>& records);

/// Writes `<pid>_<idx>_pred.pgm` and `<pid>_<idx>_gt.pgm` per slice.
void predict_patient(DualBranchNet<float>& net, const std::vector<SliceRecord>& records,
                     const std::filesystem::path& out_dir);

struct AblationRow {
  bool enable_mem = false;
  bool enable_cif = false;
  double dice = 0.0;
  double sens = 0.0;
  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // (F,F), (T,F), (F,T), (T,T)
  friend bool operator==(const AblationResult&, const AblationResult&) = default;
};

void to_json(nlohmann::json& j, const AblationResult& r);

/// Aligned text tables: a check-mark grid plus Dice and Sens columns.
std::string format_ablation_table(const AblationResult& r);
std::string format_metric_table(const MetricReport& r);

}  // namespace dualseg
