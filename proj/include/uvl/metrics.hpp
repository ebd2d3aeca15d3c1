#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "uvl/router.hpp"
#include "uvl/tensor.hpp"

namespace uvl {

// Flat metric name -> value map, preserving insertion order.
struct EvalReport {
  std::vector<std::pair<std::string, double>> entries;

  void set(const std::string& name, double value);
  double get(const std::string& name) const;  // throws InputError when missing
  bool has(const std::string& name) const;
  // "name value" per line, %.17g
  void write(std::ostream& out) const;
  // two-line CSV: header row of names, then values
  void write_csv(std::ostream& out) const;
};

// ---- semantic segmentation ----
// Per-class IoU = TP/(TP+FP+FN) averaged over classes present in GT or
// prediction; mAcc = mean per-class recall over classes present in GT.
std::pair<double, double> miou_macc(const std::vector<int>& pred,
                                    const std::vector<int>& gt, int num_classes);

// ---- instance segmentation ----
struct InstanceGt {
  int class_id = 0;
  std::vector<std::uint8_t> mask;
};

struct InstanceApResult {
  double map = 0.0;   // mean over IoU thresholds 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap25 = 0.0;
};

// Greedy matching of score-ranked predictions to unmatched GT per class and
// scene; AP is area under the precision-recall curve (all-point
// interpolation), averaged over classes present in GT.
InstanceApResult instance_ap(const std::vector<std::vector<InstancePrediction>>& preds,
                             const std::vector<std::vector<InstanceGt>>& gts);

// Same AP machinery on axis-aligned bounding boxes of the masks; voxel
// coordinates give each mask bit a unit cell. Returns {bAP@50, bAP@25}.
std::pair<double, double> box_ap(
    const std::vector<std::vector<InstancePrediction>>& preds,
    const std::vector<std::vector<InstanceGt>>& gts,
    const std::vector<std::vector<std::array<int, 3>>>& coords);

// Axis-aligned box IoU; boxes are {min_xyz, max_xyz} with inclusive extents.
struct Box3 {
  std::array<double, 3> lo{}, hi{};
};
double box_iou(const Box3& a, const Box3& b);
Box3 mask_box(const std::vector<std::uint8_t>& mask,
              const std::vector<std::array<int, 3>>& coords);

// ---- grounding ----
// Per-referral mask IoU; Acc@t counts IoU >= t.
struct GroundingAcc {
  double miou = 0.0;
  double acc25 = 0.0;
  double acc50 = 0.0;
};
GroundingAcc grounding_acc(const std::vector<std::vector<std::uint8_t>>& pred_masks,
                           const std::vector<std::vector<std::uint8_t>>& gt_masks);

// ---- captioning ----
// Clipped unigram precision times brevity penalty. Empty candidate -> 0.
double bleu1(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference);
// LCS F-measure with beta = 1.2 (recall-weighted).
double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference);

// ---- retrieval ----
// Fraction of rows whose diagonal entry ranks within the top k columns;
// ties resolve toward the lower column index.
double recall_at_k(const Tensor& similarity, int k);

}  // namespace uvl
