// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "demoseg/error.hpp"

namespace demoseg {

namespace {

// Column-wise log-softmax of x / t over the leading axis: [C, N] layout.
template <typename T>
void log_softmax_cols(const T* x, std::int64_t c, std::int64_t n, double t, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(c * n), 0.0);
  for (std::int64_t v = 0; v < n; ++v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t k = 0; k < c; ++k) mx = std::max(mx, double(x[k * n + v]) / t);
    double s = 0;
    for (std::int64_t k = 0; k < c; ++k) s += std::exp(double(x[k * n + v]) / t - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t k = 0; k < c; ++k) out[static_cast<std::size_t>(k * n + v)] = double(x[k * n + v]) / t - lse;
  }
}

}  // namespace

template <typename T>
Var<T> channel_kl(const Var<T>& student, const Var<T>& teacher, double t, bool detach_teacher) {
  if (!(t > 0)) throw ContractViolation("temperature must be > 0");
  if (student.shape() != teacher.shape())
    throw ShapeError("channel_kl: " + to_string(student.shape()) + " vs " + to_string(teacher.shape()));
  const std::int64_t c = student.shape().at(0);
  const std::int64_t n = student.value().inner();
  std::vector<double> lp, lq;
  log_softmax_cols(student.value().data(), c, n, t, lp);
  log_softmax_cols(teacher.value().data(), c, n, t, lq);
  std::vector<double> kl_vox(static_cast<std::size_t>(n), 0.0);
  double total = 0;
  for (std::int64_t v = 0; v < n; ++v) {
    double s = 0;
    for (std::int64_t k = 0; k < c; ++k) {
      const auto i = static_cast<std::size_t>(k * n + v);
      s += std::exp(lp[i]) * (lp[i] - lq[i]);
    }
    kl_vox[static_cast<std::size_t>(v)] = s;
    total += s;
  }
  Tensor<T> y(Shape{1}, static_cast<T>(total / double(n)));
  const Var<T> tv = detach_teacher ? ops::detach(teacher) : teacher;
  return make_op<T>("channel_kl", std::move(y), {student, tv},
                    [lp = std::move(lp), lq = std::move(lq), kl_vox = std::move(kl_vox), c, n, t](Node<T>& self) {
                      const double g = double(self.grad[0]) / double(n) / t;
                      auto& sn = *self.parents[0];
                      auto& tn = *self.parents[1];
                      if (sn.requires_grad) {
                        auto& ds = sn.grad_buffer();
                        for (std::int64_t k = 0; k < c; ++k) {
                          for (std::int64_t v = 0; v < n; ++v) {
                            const auto i = static_cast<std::size_t>(k * n + v);
                            const double p = std::exp(lp[i]);
                            ds[i] += static_cast<T>(g * p * ((lp[i] - lq[i]) - kl_vox[static_cast<std::size_t>(v)]));
                          }
                        }
                      }
                      if (tn.requires_grad) {
                        auto& dt = tn.grad_buffer();
                        for (std::size_t i = 0; i < lp.size(); ++i)
                          dt[i] += static_cast<T>(g * (std::exp(lq[i]) - std::exp(lp[i])));
                      }
                    });
}

template <typename T>
Var<T> kd_loss(const std::array<std::optional<DecoupledFeatures<T>>, kNumModalities>& features, double t, bool post,
               bool detach_teacher, int* pairs) {
  if (!(t > 0)) throw ContractViolation("kd_loss: temperature must be > 0");
  std::vector<Var<T>> terms;
  for (Modality m : kModalities) {
    const auto& fm = features[index_of(m)];
    if (!fm) continue;
    for (Modality n : kModalities) {
      if (n == m) continue;
      const auto& fn = features[index_of(n)];
      if (!fn) continue;
      terms.push_back(channel_kl(fn->mutual(m, post), fm->self(post), t, detach_teacher));
    }
  }
  if (pairs) *pairs = static_cast<int>(terms.size());
  if (terms.empty()) return Var<T>::constant(Tensor<T>(Shape{1}, T{0}));
  return ops::sum(ops::concat(terms, 0));
}

template <typename T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, const Extent3& extent, int num_classes) {
  if (static_cast<std::int64_t>(labels.size()) != extent.voxels())
    throw ShapeError("one_hot: label count does not match extent");
  Tensor<T> out(Shape{num_classes, extent.d, extent.h, extent.w});
  const auto n = static_cast<std::size_t>(extent.voxels());
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes)
      throw DataError("label id " + std::to_string(labels[i]) + " >= K = " + std::to_string(num_classes));
    out[labels[i] * n + i] = T{1};
  }
  return out;
}

template <typename T>
Var<T> dice_ce_loss(const Var<T>& logits, const Tensor<T>& target, double eps) {
  if (logits.shape() != target.shape())
    throw ShapeError("dice_ce_loss: logits " + to_string(logits.shape()) + " vs target " + to_string(target.shape()));
  if (!(eps >= 0)) throw ContractViolation("dice_ce_loss: eps must be >= 0");
  const std::int64_t k = logits.shape().at(0);
  const std::int64_t n = logits.value().inner();
  std::vector<double> lp;
  log_softmax_cols(logits.value().data(), k, n, 1.0, lp);
  std::vector<double> inter(static_cast<std::size_t>(k), 0.0), uni(static_cast<std::size_t>(k), 0.0);
  double ce = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    for (std::int64_t v = 0; v < n; ++v) {
      const auto i = static_cast<std::size_t>(c * n + v);
      const double p = std::exp(lp[i]);
      const double g = double(target[i]);
      inter[static_cast<std::size_t>(c)] += g * p;
      uni[static_cast<std::size_t>(c)] += g + p;
      if (g != 0) ce -= g * lp[i];
    }
  }
  double dice = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    const double den = uni[static_cast<std::size_t>(c)] + eps;
    const double ratio = den > 0 ? (2 * inter[static_cast<std::size_t>(c)] + eps) / den : 1.0;
    dice += 1.0 - ratio;
  }
  dice /= double(k);
  ce /= double(n);
  Tensor<T> y(Shape{1}, static_cast<T>(dice + ce));
  return make_op<T>(
      "dice_ce", std::move(y), {logits},
      [lp = std::move(lp), inter = std::move(inter), uni = std::move(uni), target, k, n, eps](Node<T>& self) {
        const double g0 = double(self.grad[0]);
        auto& dz = self.parents[0]->grad_buffer();
        std::vector<double> a(static_cast<std::size_t>(k));
        for (std::int64_t v = 0; v < n; ++v) {
          // Dice part: a_c = dL/dp_c, then through the softmax Jacobian.
          double pa = 0, gsum = 0;
          for (std::int64_t c = 0; c < k; ++c) {
            const auto i = static_cast<std::size_t>(c * n + v);
            const auto cc = static_cast<std::size_t>(c);
            const double den = uni[cc] + eps;
            const double g = double(target[i]);
            a[cc] = den > 0 ? -(2 * g * den - (2 * inter[cc] + eps)) / (den * den) / double(k) : 0.0;
            pa += std::exp(lp[i]) * a[cc];
            gsum += g;
          }
          for (std::int64_t c = 0; c < k; ++c) {
            const auto i = static_cast<std::size_t>(c * n + v);
            const double p = std::exp(lp[i]);
            const double d_dice = p * (a[static_cast<std::size_t>(c)] - pa);
            const double d_ce = (p * gsum - double(target[i])) / double(n);
            dz[i] += static_cast<T>(g0 * (d_dice + d_ce));
          }
        }
      });
}

template <typename T>
Var<T> dice_ce_loss(const Var<T>& logits, const std::vector<std::uint8_t>& labels, double eps) {
  const Extent3 e = spatial_extent(logits.shape());
  return dice_ce_loss(logits, one_hot<T>(labels, e, static_cast<int>(logits.shape()[0])), eps);
}

std::vector<double> deep_supervision_weights(int num_scales) {
  if (num_scales < 1) throw ContractViolation("deep supervision needs >= 1 scale");
  std::vector<double> w(static_cast<std::size_t>(num_scales));
  double s = 0;
  for (int i = 0; i < num_scales; ++i) {
    w[static_cast<std::size_t>(i)] = std::ldexp(1.0, -i);
    s += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

LabelVolume downsample_labels_majority(const LabelVolume& labels) {
  const Extent3 e = labels.extent;
  if (e.d % 2 || e.h % 2 || e.w % 2) throw ShapeError("majority downsampling needs even extents");
  LabelVolume out(Extent3{e.d / 2, e.h / 2, e.w / 2}, 0);
  for (std::int64_t d = 0; d < out.extent.d; ++d) {
    for (std::int64_t h = 0; h < out.extent.h; ++h) {
      for (std::int64_t w = 0; w < out.extent.w; ++w) {
        std::array<int, 256> count{};
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) ++count[labels.at(2 * d + a, 2 * h + b, 2 * w + c)];
        // max_element returns the first maximum, i.e. the lowest id on ties.
        out.at(d, h, w) = static_cast<std::uint8_t>(std::max_element(count.begin(), count.end()) - count.begin());
      }
    }
  }
  return out;
}

std::vector<LabelVolume> label_pyramid(const LabelVolume& labels, int num_scales) {
  std::vector<LabelVolume> out{labels};
  for (int s = 1; s < num_scales; ++s) out.push_back(downsample_labels_majority(out.back()));
  return out;
}

template <typename T>
LossResult<T> total_loss(const ForwardOutput<T>& out, const std::vector<LabelVolume>& pyramid, const LossConfig& cfg) {
  if (out.logits.empty()) throw ContractViolation("total_loss: no logits");
  int supervised = cfg.deep_supervision ? static_cast<int>(out.logits.size()) : 1;
  if (cfg.deep_supervision && cfg.ds_exclude_lowest && supervised > 1) --supervised;
  if (static_cast<int>(pyramid.size()) < supervised) throw ContractViolation("total_loss: label pyramid too short");

  LossResult<T> r;
  r.breakdown.temperature = cfg.temperature;
  r.breakdown.weights = deep_supervision_weights(supervised);
  std::vector<Var<T>> terms;
  for (int s = 0; s < supervised; ++s) {
    const auto& lg = out.logits[static_cast<std::size_t>(s)];
    const auto& lab = pyramid[static_cast<std::size_t>(s)];
    if (spatial_extent(lg.shape()) != lab.extent)
      throw ShapeError("total_loss: scale " + std::to_string(s) + " logits " + to_string(lg.shape()) +
                       " do not match labels");
    Var<T> l = dice_ce_loss(lg, lab.data, cfg.dice_eps);
    const double w = r.breakdown.weights[static_cast<std::size_t>(s)];
    r.breakdown.seg_per_scale.push_back(double(l.value()[0]));
    r.breakdown.seg += w * double(l.value()[0]);
    terms.push_back(ops::scale(l, w));
  }
  if (cfg.kd_placement != KdPlacement::none && cfg.kd_weight != 0.0) {
    int pairs = 0;
    Var<T> kd = kd_loss(out.features, cfg.temperature, cfg.kd_placement == KdPlacement::after_cssa,
                        cfg.kd_detach_teacher, &pairs);
    r.breakdown.kd_pairs = pairs;
    r.breakdown.kd = cfg.kd_weight * double(kd.value()[0]);
    if (pairs > 0) terms.push_back(ops::scale(kd, cfg.kd_weight));
  }
  r.total = ops::sum(ops::concat(terms, 0));
  r.breakdown.total = double(r.total.value()[0]);
  return r;
}

#define DEMOSEG_INSTANTIATE_LOSSES(T)                                                                               \
  template Var<T> channel_kl<T>(const Var<T>&, const Var<T>&, double, bool);                                       \
  template Var<T> kd_loss<T>(const std::array<std::optional<DecoupledFeatures<T>>, kNumModalities>&, double, bool, \
                             bool, int*);                                                                          \
  template Var<T> dice_ce_loss<T>(const Var<T>&, const Tensor<T>&, double);                                        \
  template Var<T> dice_ce_loss<T>(const Var<T>&, const std::vector<std::uint8_t>&, double);                        \
  template Tensor<T> one_hot<T>(const std::vector<std::uint8_t>&, const Extent3&, int);                            \
  template LossResult<T> total_loss<T>(const ForwardOutput<T>&, const std::vector<LabelVolume>&, const LossConfig&);

DEMOSEG_INSTANTIATE_LOSSES(float)
DEMOSEG_INSTANTIATE_LOSSES(double)

}  // namespace demoseg
