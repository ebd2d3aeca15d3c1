#include "uvl/router.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace uvl {

const char* task_name(Task t) {
  switch (t) {
    case Task::semantic_seg: return "semantic_seg";
    case Task::instance_seg: return "instance_seg";
    case Task::grounded_seg: return "grounded_seg";
    case Task::captioning: return "captioning";
    case Task::retrieval: return "retrieval";
    case Task::shape_classification: return "shape_classification";
  }
  throw InputError("task_name: unknown task");
}

Task task_from_name(const std::string& name) {
  for (Task t : {Task::semantic_seg, Task::instance_seg, Task::grounded_seg,
                 Task::captioning, Task::retrieval, Task::shape_classification})
    if (name == task_name(t)) return t;
  throw InputError("unknown task: " + name);
}

HeadComposition head_composition(Task t) {
  HeadComposition h;
  switch (t) {
    case Task::semantic_seg:
    case Task::instance_seg:
      h.obj_cls = true;
      h.mask = true;
      break;
    case Task::grounded_seg:
      h.mask = true;
      h.grounding = true;
      break;
    case Task::captioning:
      h.text_gen = true;
      break;
    case Task::retrieval:
    case Task::shape_classification:
      h.matching = true;
      break;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Hungarian assignment
// ---------------------------------------------------------------------------

namespace {

// Potentials-based shortest augmenting path; requires rows <= cols.
// Costs are 1-indexed inside; ties resolve to the lowest index by strict
// comparisons.
std::vector<int> solve_rows_le_cols(const std::vector<double>& a, int n, int m) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a[static_cast<size_t>(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

MatchResult hungarian(const std::vector<double>& cost, int n, int m) {
  if (n < 0 || m < 0 || static_cast<int>(cost.size()) != n * m)
    throw ShapeError("hungarian: cost matrix size mismatch");
  for (double c : cost)
    if (std::isnan(c)) throw InputError("hungarian: NaN cost");
  MatchResult res;
  if (n == 0 || m == 0) return res;

  std::vector<int> row_to_col;
  if (n <= m) {
    row_to_col = solve_rows_le_cols(cost, n, m);
  } else {
    std::vector<double> t(cost.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) t[static_cast<size_t>(j) * n + i] = cost[static_cast<size_t>(i) * m + j];
    std::vector<int> col_to_row = solve_rows_le_cols(t, m, n);
    row_to_col.assign(n, -1);
    for (int j = 0; j < m; ++j)
      if (col_to_row[j] >= 0) row_to_col[col_to_row[j]] = j;
  }
  for (int i = 0; i < n; ++i) {
    if (row_to_col[i] < 0) continue;
    res.assignment.emplace_back(i, row_to_col[i]);
    res.cost += cost[static_cast<size_t>(i) * m + row_to_col[i]];
  }
  return res;
}

// ---------------------------------------------------------------------------
// classification head
// ---------------------------------------------------------------------------

Tensor classify(const Tensor& obj_semantic, const Tensor& class_emb) {
  return matmul(obj_semantic, transpose(class_emb));
}

Tensor loss_cls(const Tensor& class_logits, const MatchResult& match,
                const GroundTruthInstances& gt, int background_class,
                const LossWeights& w) {
  const int q = class_logits.rows();
  if (background_class < 0 || background_class >= class_logits.cols())
    throw InputError("loss_cls: background class out of range");
  std::vector<int> targets(q, background_class);
  for (const auto& [qi, gi] : match.assignment) {
    if (qi < 0 || qi >= q || gi < 0 || gi >= static_cast<int>(gt.classes.size()))
      throw InputError("loss_cls: assignment index out of range");
    targets[qi] = gt.classes[gi];
  }
  std::vector<double> weights(q, 1.0);
  for (int i = 0; i < q; ++i)
    if (targets[i] == background_class) weights[i] = w.bg_weight;
  return scale(cross_entropy_rows(class_logits, targets, weights), w.cls);
}

// ---------------------------------------------------------------------------
// mask head
// ---------------------------------------------------------------------------

Tensor predict_masks(const Tensor& mask_embed, const Tensor& voxel_feats) {
  const int q = mask_embed.rows() - 1;  // drop the scene query
  if (q < 1) throw ShapeError("predict_masks: need at least one object query");
  return matmul(slice_rows(mask_embed, 0, q), transpose(voxel_feats));
}

Tensor loss_mask(const Tensor& mask_logits, const MatchResult& match,
                 const std::vector<std::vector<double>>& gt_masks,
                 const LossWeights& w) {
  if (match.assignment.empty()) return Tensor::scalar(0.0);
  Tensor acc;
  for (const auto& [qi, gi] : match.assignment) {
    if (gi < 0 || gi >= static_cast<int>(gt_masks.size()))
      throw InputError("loss_mask: ground-truth index out of range");
    Tensor row = slice_rows(mask_logits, qi, 1);
    Tensor term = add(scale(bce_with_logits_mean(row, gt_masks[gi]), w.bce),
                      scale(dice_loss(row, gt_masks[gi]), w.dice));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(match.assignment.size()));
}

MatchResult match_instances(const Tensor& class_logits, const Tensor& mask_logits,
                            const GroundTruthInstances& gt, const LossWeights& w) {
  const int q = class_logits.rows();
  const int g = static_cast<int>(gt.classes.size());
  if (static_cast<int>(gt.masks.size()) != g)
    throw InputError("match_instances: class/mask count mismatch");
  if (g == 0) return MatchResult{};
  if (mask_logits.rows() != q)
    throw ShapeError("match_instances: query count mismatch between heads");
  const int nv = mask_logits.cols();
  const int nc = class_logits.cols();

  std::vector<double> cost(static_cast<size_t>(q) * g, 0.0);
  for (int qi = 0; qi < q; ++qi) {
    // stable softmax over this query's class logits
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < nc; ++c) mx = std::max(mx, class_logits.at(qi, c));
    double z = 0.0;
    for (int c = 0; c < nc; ++c) z += std::exp(class_logits.at(qi, c) - mx);

    for (int gi = 0; gi < g; ++gi) {
      const std::vector<double>& m = gt.masks[gi];
      if (static_cast<int>(m.size()) != nv)
        throw ShapeError("match_instances: mask length mismatch");
      int cls = gt.classes[gi];
      if (cls < 0 || cls >= nc) throw InputError("match_instances: class out of range");
      double prob = std::exp(class_logits.at(qi, cls) - mx) / z;

      double bce = 0.0, inter = 0.0, psum = 0.0, gsum = 0.0;
      for (int v = 0; v < nv; ++v) {
        double x = mask_logits.at(qi, v);
        // log(1+e^x) - x*t, computed stably
        bce += (x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x))) -
               x * m[v];
        double p = 1.0 / (1.0 + std::exp(-x));
        inter += p * m[v];
        psum += p;
        gsum += m[v];
      }
      bce /= nv;
      double dice = 1.0 - 2.0 * inter / (psum + gsum + 1e-6);
      cost[static_cast<size_t>(qi) * g + gi] =
          w.cls * (-prob) + w.bce * bce + w.dice * dice;
    }
  }
  return hungarian(cost, q, g);
}

// ---------------------------------------------------------------------------
// grounding head
// ---------------------------------------------------------------------------

Tensor grounding_logits(const Tensor& text_emb, const Tensor& obj_semantic,
                        const Tensor& eta) {
  return scale_by(matmul(text_emb, transpose(obj_semantic)), exp(eta));
}

Tensor grounding_similarity(const Tensor& text_emb, const Tensor& obj_semantic,
                            const Tensor& eta) {
  return softmax_rows(grounding_logits(text_emb, obj_semantic, eta));
}

Tensor loss_grounding(const Tensor& grounding_logits_, const std::vector<int>& matched_query,
                      const Tensor& tcls_logits, const std::vector<double>& tcls_targets,
                      const Tensor& mask_logits,
                      const std::vector<std::vector<double>>& referred_masks,
                      const LossWeights& w) {
  const int nr = grounding_logits_.rows();
  if (static_cast<int>(matched_query.size()) != nr ||
      static_cast<int>(referred_masks.size()) != nr)
    throw ShapeError("loss_grounding: one matched query and mask per referred object");
  // reuse the mask-loss form with (query, referred object) pairs
  MatchResult pairs;
  for (int r = 0; r < nr; ++r) pairs.assignment.emplace_back(matched_query[r], r);
  Tensor gmask = loss_mask(mask_logits, pairs, referred_masks, w);

  return add(add(scale(cross_entropy_rows(grounding_logits_, matched_query), w.gc),
                 bce_with_logits_mean(tcls_logits, tcls_targets)),
             gmask);
}

// ---------------------------------------------------------------------------
// text generation head
// ---------------------------------------------------------------------------

Tensor caption_logits(const Tensor& text_semantic, const Tensor& token_table) {
  return matmul(text_semantic, transpose(token_table));
}

Tensor loss_caption(const Tensor& logits, const std::vector<int>& targets,
                    const LossWeights& w) {
  if (static_cast<int>(targets.size()) != logits.rows())
    throw ShapeError("loss_caption: one target per position");
  std::vector<double> weights(targets.size(), 1.0);
  bool any = false;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == 0) {
      weights[i] = 0.0;  // PAD positions do not contribute
    } else {
      any = true;
    }
  }
  if (!any) return Tensor::scalar(0.0);
  return scale(cross_entropy_rows(logits, targets, weights), w.cap);
}

// ---------------------------------------------------------------------------
// matching head
// ---------------------------------------------------------------------------

Tensor matching_similarity(const Tensor& shape_embs, const Tensor& text_embs,
                           const Tensor& log_inv_tau) {
  Tensor sim = matmul(l2_normalize_rows(shape_embs),
                      transpose(l2_normalize_rows(text_embs)));
  return scale_by(sim, exp(log_inv_tau));
}

Tensor loss_retrieval(const Tensor& similarity, const std::vector<int>& targets,
                      const LossWeights& w) {
  const int b = similarity.rows();
  if (similarity.cols() != b) throw ShapeError("loss_retrieval: square matrix required");
  if (static_cast<int>(targets.size()) != b)
    throw ShapeError("loss_retrieval: one target per row");
  std::vector<int> inverse(b, -1);
  for (int i = 0; i < b; ++i) {
    if (targets[i] < 0 || targets[i] >= b || inverse[targets[i]] != -1)
      throw InputError("loss_retrieval: targets must form a permutation");
    inverse[targets[i]] = i;
  }
  Tensor rows = cross_entropy_rows(similarity, targets);
  Tensor cols = cross_entropy_rows(transpose(similarity), inverse);
  return scale(add(rows, cols), 0.5 * w.ret);
}

Tensor total_loss(const std::vector<Tensor>& parts) {
  Tensor acc;
  for (const Tensor& p : parts) {
    if (!p.defined()) continue;
    acc = acc.defined() ? add(acc, p) : p;
  }
  return acc.defined() ? acc : Tensor::scalar(0.0);
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

std::vector<InstancePrediction> infer_instances(const Tensor& class_logits,
                                                const Tensor& mask_logits, int top_k) {
  if (top_k < 1) throw InputError("infer_instances: top_k must be >= 1");
  const int q = class_logits.rows();
  const int nc = class_logits.cols();
  const int nv = mask_logits.cols();
  if (mask_logits.rows() != q)
    throw ShapeError("infer_instances: query count mismatch");
  const int background = nc - 1;

  std::vector<InstancePrediction> preds;
  preds.reserve(q);
  for (int qi = 0; qi < q; ++qi) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < nc; ++c) mx = std::max(mx, class_logits.at(qi, c));
    double z = 0.0;
    for (int c = 0; c < nc; ++c) z += std::exp(class_logits.at(qi, c) - mx);
    int best = 0;
    double best_prob = -1.0;
    for (int c = 0; c < background; ++c) {
      double p = std::exp(class_logits.at(qi, c) - mx) / z;
      if (p > best_prob) {
        best_prob = p;
        best = c;
      }
    }
    InstancePrediction pred;
    pred.class_id = best;
    pred.score = best_prob;
    pred.mask.resize(nv);
    for (int v = 0; v < nv; ++v) pred.mask[v] = mask_logits.at(qi, v) > 0.0;
    preds.push_back(std::move(pred));
  }
  std::stable_sort(preds.begin(), preds.end(),
                   [](const InstancePrediction& a, const InstancePrediction& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(preds.size()) > top_k) preds.resize(top_k);
  return preds;
}

std::vector<int> infer_semantic(const std::vector<InstancePrediction>& preds,
                                int num_voxels) {
  int fallback = preds.empty() ? 0 : preds.front().class_id;
  std::vector<int> out(num_voxels, -1);
  for (const auto& p : preds) {  // preds already sorted by score desc
    if (static_cast<int>(p.mask.size()) != num_voxels)
      throw ShapeError("infer_semantic: mask length mismatch");
    for (int v = 0; v < num_voxels; ++v)
      if (out[v] < 0 && p.mask[v]) out[v] = p.class_id;
  }
  for (int v = 0; v < num_voxels; ++v)
    if (out[v] < 0) out[v] = fallback;
  return out;
}

// ---------------------------------------------------------------------------
// prediction dump
// ---------------------------------------------------------------------------

void write_predictions(std::ostream& out, const std::vector<InstancePrediction>& preds) {
  out << "PRED 1 " << preds.size() << "\n";
  char buf[64];
  for (const auto& p : preds) {
    std::snprintf(buf, sizeof(buf), "%.17g", p.score);
    out << p.class_id << " " << buf << " " << p.mask.size();
    // alternating run lengths, zeros first
    size_t i = 0;
    std::uint8_t cur = 0;
    while (i < p.mask.size()) {
      size_t run = 0;
      while (i + run < p.mask.size() && p.mask[i + run] == cur) ++run;
      out << " " << run;
      i += run;
      cur = !cur;
    }
    out << "\n";
  }
}

std::vector<InstancePrediction> read_predictions(std::istream& in,
                                                 const std::string& origin) {
  std::string magic;
  int version = 0;
  size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != "PRED" || version != 1)
    throw ParseError(origin + ": bad prediction header");
  std::vector<InstancePrediction> preds(count);
  for (size_t r = 0; r < count; ++r) {
    InstancePrediction& p = preds[r];
    size_t nv = 0;
    if (!(in >> p.class_id >> p.score >> nv))
      throw ParseError(origin + ": truncated prediction record " + std::to_string(r));
    p.mask.reserve(nv);
    std::uint8_t cur = 0;
    while (p.mask.size() < nv) {
      size_t run = 0;
      if (!(in >> run) || p.mask.size() + run > nv)
        throw ParseError(origin + ": bad run-length data in record " + std::to_string(r));
      p.mask.insert(p.mask.end(), run, cur);
      cur = !cur;
    }
  }
  return preds;
}

}  // namespace uvl
