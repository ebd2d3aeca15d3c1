#include "uvl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <set>

namespace uvl {

void EvalReport::set(const std::string& name, double value) {
  for (auto& [n, v] : entries) {
    if (n == name) {
      v = value;
      return;
    }
  }
  entries.emplace_back(name, value);
}

double EvalReport::get(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return v;
  throw InputError("EvalReport: no metric named " + name);
}

bool EvalReport::has(const std::string& name) const {
  for (const auto& [n, v] : entries)
    if (n == name) return true;
  return false;
}

void EvalReport::write(std::ostream& out) const {
  char buf[64];
  for (const auto& [n, v] : entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << n << " " << buf << "\n";
  }
}

void EvalReport::write_csv(std::ostream& out) const {
  char buf[64];
  for (size_t i = 0; i < entries.size(); ++i)
    out << entries[i].first << (i + 1 < entries.size() ? "," : "\n");
  for (size_t i = 0; i < entries.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", entries[i].second);
    out << buf << (i + 1 < entries.size() ? "," : "\n");
  }
}

// ---------------------------------------------------------------------------
// semantic segmentation
// ---------------------------------------------------------------------------

std::pair<double, double> miou_macc(const std::vector<int>& pred,
                                    const std::vector<int>& gt, int num_classes) {
  if (pred.size() != gt.size()) throw ShapeError("miou_macc: length mismatch");
  if (num_classes < 1) throw InputError("miou_macc: need at least one class");
  std::vector<long long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
      throw InputError("miou_macc: class id out of range");
    if (p == g) {
      tp[p]++;
    } else {
      fp[p]++;
      fn[g]++;
    }
  }
  double iou_sum = 0.0, acc_sum = 0.0;
  int iou_n = 0, acc_n = 0;
  for (int c = 0; c < num_classes; ++c) {
    long long denom = tp[c] + fp[c] + fn[c];
    if (denom > 0) {  // class present in GT or prediction
      iou_sum += static_cast<double>(tp[c]) / static_cast<double>(denom);
      iou_n++;
    }
    long long gt_count = tp[c] + fn[c];
    if (gt_count > 0) {
      acc_sum += static_cast<double>(tp[c]) / static_cast<double>(gt_count);
      acc_n++;
    }
  }
  return {iou_n ? iou_sum / iou_n : 0.0, acc_n ? acc_sum / acc_n : 0.0};
}

// ---------------------------------------------------------------------------
// AP engine
// ---------------------------------------------------------------------------

namespace {

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw ShapeError("mask IoU: length mismatch");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    bool pa = a[i], pb = b[i];
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

struct RankedPred {
  double score;
  int scene;
  int index;  // within its scene's prediction list
};

// AP over one class at one IoU threshold. `iou(scene, pred_index, gt_index)`
// scores a candidate pair; GT lists hold indices into each scene.
template <typename IouFn>
double class_ap(const std::vector<RankedPred>& ranked,
                const std::vector<std::vector<int>>& gt_of_scene, long long num_gt,
                double threshold, IouFn iou) {
  if (num_gt == 0) return 0.0;
  std::vector<std::vector<char>> taken(gt_of_scene.size());
  for (size_t s = 0; s < gt_of_scene.size(); ++s)
    taken[s].assign(gt_of_scene[s].size(), 0);

  std::vector<double> precision, recall;
  long long tp = 0, fpred = 0;
  for (const RankedPred& p : ranked) {
    // greedy: best still-unmatched GT in the same scene
    int best = -1;
    double best_iou = threshold;
    const auto& gts = gt_of_scene[p.scene];
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[p.scene][g]) continue;
      double v = iou(p.scene, p.index, gts[g]);
      if (v >= best_iou) {  // ties keep the earlier GT
        if (best < 0 || v > best_iou) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
    }
    if (best >= 0) {
      taken[p.scene][best] = 1;
      tp++;
    } else {
      fpred++;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fpred));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }

  // all-point interpolation: running max of precision from the right
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

// Mean AP over classes present in GT at one threshold.
template <typename IouFn>
double dataset_ap(const std::vector<std::vector<InstancePrediction>>& preds,
                  const std::vector<std::vector<InstanceGt>>& gts, double threshold,
                  IouFn iou) {
  std::set<int> classes;
  for (const auto& scene : gts)
    for (const auto& g : scene) classes.insert(g.class_id);
  if (classes.empty()) return 0.0;

  double sum = 0.0;
  for (int cls : classes) {
    std::vector<RankedPred> ranked;
    std::vector<std::vector<int>> gt_of_scene(gts.size());
    long long num_gt = 0;
    for (size_t s = 0; s < gts.size(); ++s) {
      for (size_t g = 0; g < gts[s].size(); ++g)
        if (gts[s][g].class_id == cls) {
          gt_of_scene[s].push_back(static_cast<int>(g));
          num_gt++;
        }
      if (s < preds.size())
        for (size_t p = 0; p < preds[s].size(); ++p)
          if (preds[s][p].class_id == cls)
            ranked.push_back({preds[s][p].score, static_cast<int>(s),
                              static_cast<int>(p)});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const RankedPred& a, const RankedPred& b) {
                       return a.score > b.score;
                     });
    sum += class_ap(ranked, gt_of_scene, num_gt, threshold, iou);
  }
  return sum / static_cast<double>(classes.size());
}

}  // namespace

InstanceApResult instance_ap(const std::vector<std::vector<InstancePrediction>>& preds,
                             const std::vector<std::vector<InstanceGt>>& gts) {
  auto iou = [&](int scene, int p, int g) {
    return mask_iou(preds[scene][p].mask, gts[scene][g].mask);
  };
  InstanceApResult res;
  res.ap50 = dataset_ap(preds, gts, 0.50, iou);
  res.ap25 = dataset_ap(preds, gts, 0.25, iou);
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) sum += dataset_ap(preds, gts, 0.50 + 0.05 * i, iou);
  res.map = sum / 10.0;
  return res;
}

Box3 mask_box(const std::vector<std::uint8_t>& mask,
              const std::vector<std::array<int, 3>>& coords) {
  if (mask.size() != coords.size()) throw ShapeError("mask_box: length mismatch");
  Box3 b;
  bool any = false;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    for (int a = 0; a < 3; ++a) {
      double lo = coords[i][a], hi = coords[i][a] + 1.0;  // unit voxel cell
      if (!any || lo < b.lo[a]) b.lo[a] = lo;
      if (!any || hi > b.hi[a]) b.hi[a] = hi;
    }
    any = true;
  }
  if (!any) {
    b.lo = {0, 0, 0};
    b.hi = {0, 0, 0};  // empty box
  }
  return b;
}

double box_iou(const Box3& a, const Box3& b) {
  double inter = 1.0, va = 1.0, vb = 1.0;
  for (int i = 0; i < 3; ++i) {
    double lo = std::max(a.lo[i], b.lo[i]);
    double hi = std::min(a.hi[i], b.hi[i]);
    inter *= std::max(0.0, hi - lo);
    va *= std::max(0.0, a.hi[i] - a.lo[i]);
    vb *= std::max(0.0, b.hi[i] - b.lo[i]);
  }
  double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::pair<double, double> box_ap(
    const std::vector<std::vector<InstancePrediction>>& preds,
    const std::vector<std::vector<InstanceGt>>& gts,
    const std::vector<std::vector<std::array<int, 3>>>& coords) {
  if (coords.size() != gts.size()) throw ShapeError("box_ap: one coord list per scene");
  // precompute boxes
  std::vector<std::vector<Box3>> pbox(preds.size()), gbox(gts.size());
  for (size_t s = 0; s < preds.size(); ++s)
    for (const auto& p : preds[s]) pbox[s].push_back(mask_box(p.mask, coords[s]));
  for (size_t s = 0; s < gts.size(); ++s)
    for (const auto& g : gts[s]) gbox[s].push_back(mask_box(g.mask, coords[s]));
  auto iou = [&](int scene, int p, int g) { return box_iou(pbox[scene][p], gbox[scene][g]); };
  return {dataset_ap(preds, gts, 0.50, iou), dataset_ap(preds, gts, 0.25, iou)};
}

// ---------------------------------------------------------------------------
// grounding
// ---------------------------------------------------------------------------

GroundingAcc grounding_acc(const std::vector<std::vector<std::uint8_t>>& pred_masks,
                           const std::vector<std::vector<std::uint8_t>>& gt_masks) {
  if (pred_masks.size() != gt_masks.size() || pred_masks.empty())
    throw InputError("grounding_acc: need matching non-empty mask lists");
  GroundingAcc acc;
  for (size_t i = 0; i < pred_masks.size(); ++i) {
    double iou = mask_iou(pred_masks[i], gt_masks[i]);
    acc.miou += iou;
    if (iou >= 0.25) acc.acc25 += 1.0;
    if (iou >= 0.50) acc.acc50 += 1.0;
  }
  double n = static_cast<double>(pred_masks.size());
  acc.miou /= n;
  acc.acc25 /= n;
  acc.acc50 /= n;
  return acc;
}

// ---------------------------------------------------------------------------
// captioning
// ---------------------------------------------------------------------------

double bleu1(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference) {
  if (candidate.empty()) return 0.0;
  std::map<std::string, int> ref_counts;
  for (const auto& w : reference) ref_counts[w]++;
  int clipped = 0;
  std::map<std::string, int> used;
  for (const auto& w : candidate) {
    auto it = ref_counts.find(w);
    if (it != ref_counts.end() && used[w] < it->second) {
      used[w]++;
      clipped++;
    }
  }
  double precision = static_cast<double>(clipped) / candidate.size();
  double bp = candidate.size() >= reference.size()
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(reference.size()) /
                                       candidate.size());
  return precision * bp;
}

double rouge_l(const std::vector<std::string>& candidate,
               const std::vector<std::string>& reference) {
  const size_t c = candidate.size(), r = reference.size();
  if (c == 0 || r == 0) return 0.0;
  std::vector<std::vector<int>> dp(c + 1, std::vector<int>(r + 1, 0));
  for (size_t i = 1; i <= c; ++i)
    for (size_t j = 1; j <= r; ++j)
      dp[i][j] = candidate[i - 1] == reference[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  double lcs = dp[c][r];
  if (lcs == 0.0) return 0.0;
  double p = lcs / c, rec = lcs / r;
  double beta2 = 1.2 * 1.2;
  return (1.0 + beta2) * p * rec / (rec + beta2 * p);
}

// ---------------------------------------------------------------------------
// retrieval
// ---------------------------------------------------------------------------

double recall_at_k(const Tensor& similarity, int k) {
  const int b = similarity.rows();
  if (similarity.cols() != b) throw ShapeError("recall_at_k: square matrix required");
  if (k < 1) throw InputError("recall_at_k: k must be >= 1");
  int hits = 0;
  for (int i = 0; i < b; ++i) {
    double diag = similarity.at(i, i);
    int rank = 0;  // columns ranked ahead of the diagonal
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      double v = similarity.at(i, j);
      if (v > diag || (v == diag && j < i)) rank++;
    }
    if (rank < k) hits++;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

}  // namespace uvl
