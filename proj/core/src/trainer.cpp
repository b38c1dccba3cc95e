// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "demoseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "demoseg/error.hpp"

namespace demoseg {

using nlohmann::json;

double poly_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractViolation("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                            ")");
  return cfg.lr * std::pow(1.0 - static_cast<double>(epoch) / cfg.epochs, cfg.poly_exponent);
}

TrainingCase TrainingCase::from_record(const CaseRecord& record) {
  TrainingCase c;
  c.case_id = record.case_id;
  c.images = normalized_inputs<float>(record);
  c.labels = record.labels;
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    if (c.labels.data[i] > 0) c.foreground.push_back(static_cast<std::int64_t>(i));
  }
  return c;
}

// ------------------------------------------------------------------ patches

Sample crop(const TrainingCase& c, const Extent3& o, const Extent3& p) {
  const Extent3 e = c.extent();
  if (p.d > e.d || p.h > e.h || p.w > e.w) throw ContractViolation("patch larger than volume of case " + c.case_id);
  if (o.d < 0 || o.h < 0 || o.w < 0 || o.d + p.d > e.d || o.h + p.h > e.h || o.w + p.w > e.w)
    throw ContractViolation("crop window outside volume");
  Sample s;
  s.offset = o;
  s.case_id = c.case_id;
  s.labels = LabelVolume(p, 0);
  for (std::size_t m = 0; m < kNumModalities; ++m) s.images[m] = Tensor<float>(Shape{1, p.d, p.h, p.w});
  for (std::int64_t d = 0; d < p.d; ++d) {
    for (std::int64_t h = 0; h < p.h; ++h) {
      const std::size_t src = c.labels.index(o.d + d, o.h + h, o.w);
      const std::size_t dst = s.labels.index(d, h, 0);
      std::copy_n(c.labels.data.begin() + static_cast<std::ptrdiff_t>(src), p.w,
                  s.labels.data.begin() + static_cast<std::ptrdiff_t>(dst));
      for (std::size_t m = 0; m < kNumModalities; ++m)
        std::copy_n(c.images[m].data() + src, p.w, s.images[m].data() + dst);
    }
  }
  return s;
}

Sample sample_patch(const TrainingCase& c, const Extent3& p, Rng& rng, double foreground_prob) {
  const Extent3 e = c.extent();
  if (p.d > e.d || p.h > e.h || p.w > e.w) throw ContractViolation("patch larger than volume of case " + c.case_id);
  auto pick = [&](std::int64_t size, std::int64_t patch) {
    return static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(size - patch + 1)));
  };
  Extent3 o{};
  if (!c.foreground.empty() && rng.bernoulli(foreground_prob)) {
    const std::int64_t idx = c.foreground[rng.below(c.foreground.size())];
    const std::int64_t w = idx % e.w, h = (idx / e.w) % e.h, d = idx / (e.w * e.h);
    // Random position of the tumour voxel inside the patch, then clamp.
    auto place = [&](std::int64_t v, std::int64_t size, std::int64_t patch) {
      const auto within = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(patch)));
      return std::clamp<std::int64_t>(v - within, 0, size - patch);
    };
    o = {place(d, e.d, p.d), place(h, e.h, p.h), place(w, e.w, p.w)};
  } else {
    o = {pick(e.d, p.d), pick(e.h, p.h), pick(e.w, p.w)};
  }
  return crop(c, o, p);
}

// ------------------------------------------------------------- augmentation

namespace {

using Coord = std::array<std::int64_t, 3>;

// out[p] = in[src(p)] for every modality and the labels.
template <typename F>
void remap(Sample& s, F&& src) {
  const Extent3 e = s.labels.extent;
  std::vector<std::size_t> table(static_cast<std::size_t>(e.voxels()));
  std::size_t i = 0;
  for (std::int64_t d = 0; d < e.d; ++d)
    for (std::int64_t h = 0; h < e.h; ++h)
      for (std::int64_t w = 0; w < e.w; ++w) {
        const Coord q = src(Coord{d, h, w});
        table[i++] = s.labels.index(q[0], q[1], q[2]);
      }
  auto lab = s.labels.data;
  for (std::size_t k = 0; k < table.size(); ++k) s.labels.data[k] = lab[table[k]];
  for (auto& img : s.images) {
    if (img.empty()) continue;
    const auto in = img.storage();
    for (std::size_t k = 0; k < table.size(); ++k) img[k] = in[table[k]];
  }
}

std::int64_t axis_len(const Extent3& e, int a) { return a == 0 ? e.d : (a == 1 ? e.h : e.w); }

}  // namespace

void flip_axis(Sample& s, int axis) {
  if (axis < 0 || axis > 2) throw ContractViolation("flip axis must be 0, 1 or 2");
  const std::int64_t n = axis_len(s.labels.extent, axis);
  remap(s, [&](Coord p) {
    p[static_cast<std::size_t>(axis)] = n - 1 - p[static_cast<std::size_t>(axis)];
    return p;
  });
}

void rotate90(Sample& s, int a, int b, int k) {
  if (a < 0 || a > 2 || b < 0 || b > 2 || a == b) throw ContractViolation("rotation plane needs two distinct axes");
  const std::int64_t n = axis_len(s.labels.extent, a);
  if (axis_len(s.labels.extent, b) != n) throw ShapeError("quarter turns need equal axis lengths");
  k = ((k % 4) + 4) % 4;
  const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
  for (int t = 0; t < k; ++t) {
    remap(s, [&](Coord p) {
      Coord q = p;
      q[ua] = n - 1 - p[ub];
      q[ub] = p[ua];
      return q;
    });
  }
}

void gaussian_blur(Tensor<float>& image, double sigma) {
  if (!(sigma > 0)) return;
  const Extent3 e = spatial_extent(image.shape());
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  const std::array<std::int64_t, 3> len{e.d, e.h, e.w};
  const std::array<std::int64_t, 3> stride{e.h * e.w, e.w, 1};
  std::vector<float> tmp(image.size());
  for (int axis = 0; axis < 3; ++axis) {
    const auto ax = static_cast<std::size_t>(axis);
    const std::int64_t n = len[ax], st = stride[ax];
    const float* in = image.data();
    for (std::int64_t i = 0; i < image.numel(); ++i) {
      const std::int64_t pos = (i / st) % n;
      double acc = 0;
      for (int t = -r; t <= r; ++t) {
        const std::int64_t q = std::clamp<std::int64_t>(pos + t, 0, n - 1);
        acc += k[static_cast<std::size_t>(t + r)] * in[i + (q - pos) * st];
      }
      tmp[static_cast<std::size_t>(i)] = static_cast<float>(acc);
    }
    std::copy(tmp.begin(), tmp.end(), image.data());
  }
}

void augment(Sample& s, Rng& rng, const AugmentToggles& t) {
  if (t.flip) {
    for (int axis = 0; axis < 3; ++axis) {
      if (rng.bernoulli(0.5)) flip_axis(s, axis);
    }
  }
  if (t.rotate) {
    static constexpr std::array<std::array<int, 2>, 3> planes{{{0, 1}, {0, 2}, {1, 2}}};
    const auto& pl = planes[rng.below(3)];
    const int k = static_cast<int>(rng.below(4));
    if (axis_len(s.labels.extent, pl[0]) == axis_len(s.labels.extent, pl[1])) rotate90(s, pl[0], pl[1], k);
  }
  for (auto& img : s.images) {
    if (img.empty()) continue;
    if (t.blur && rng.bernoulli(t.blur_prob)) gaussian_blur(img, t.blur_sigma);
    if (t.noise) {
      for (auto& v : img.values()) v += static_cast<float>(rng.normal(0.0, t.noise_sigma));
    }
  }
}

// ---------------------------------------------------------------- optimiser

template <typename T>
void Sgd<T>::step(ParameterStore<T>& params, double lr) {
  auto& entries = params.entries();
  if (velocity_.size() != entries.size()) {
    velocity_.clear();
    for (const auto& [name, v] : entries) velocity_.emplace_back(v.shape());
  }
  const T mu = static_cast<T>(momentum_);
  const T eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& var = entries[i].second;
    const auto& g = var.grad();
    auto& v = velocity_[i];
    auto& p = var.mutable_value();
    if (v.size() != p.size()) throw ShapeError("momentum buffer shape mismatch for " + entries[i].first);
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = mu * v[k] + g[k];
      const T upd = nesterov_ ? g[k] + mu * v[k] : v[k];
      p[k] -= eta * upd;
    }
  }
}

template <typename T>
double grad_norm(const ParameterStore<T>& params) {
  double s = 0;
  for (const auto& [name, v] : params.entries()) {
    for (T g : v.grad().values()) s += double(g) * double(g);
  }
  return std::sqrt(s);
}

template class Sgd<float>;
template class Sgd<double>;
template double grad_norm<float>(const ParameterStore<float>&);
template double grad_norm<double>(const ParameterStore<double>&);

// --------------------------------------------------------------- checkpoint

namespace {

constexpr char kCkptMagic[4] = {'D', 'M', 'S', 'C'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U take(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw DataError("checkpoint truncated");
  return v;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& file) const {
  const json meta = {{"config", config},
                     {"config_hash", config_hash},
                     {"epoch", epoch},
                     {"iteration", iteration},
                     {"rng_state", rng_state}};
  const std::string text = meta.dump();
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + file.string());
    os.write(kCkptMagic, 4);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    params.write(os);
    put<std::uint64_t>(os, momentum.size());
    for (const auto& t : momentum) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) put<std::int64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint write failed: " + file.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + file.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != std::string_view(kCkptMagic, 4))
    throw DataError("not a checkpoint: " + file.string());
  std::string text(take<std::uint64_t>(is), '\0');
  is.read(text.data(), static_cast<std::streamsize>(text.size()));
  if (!is) throw DataError("checkpoint truncated");
  Checkpoint ck;
  try {
    const json meta = json::parse(text);
    from_json(meta.at("config"), ck.config);
    ck.config_hash = meta.at("config_hash").get<std::uint64_t>();
    ck.epoch = meta.at("epoch").get<std::int64_t>();
    ck.iteration = meta.at("iteration").get<std::int64_t>();
    ck.rng_state = meta.at("rng_state").get<std::string>();
  } catch (const json::exception& ex) {
    throw DataError(std::string("corrupt checkpoint metadata: ") + ex.what());
  }
  if (ck.config.hash() != ck.config_hash) throw DataError("checkpoint config hash mismatch");
  init_network(ck.params, ck.config.model);
  ck.params.read(is);
  const auto n = take<std::uint64_t>(is);
  if (n != 0 && n != ck.params.size()) throw DataError("checkpoint momentum count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    Shape shape(take<std::uint32_t>(is));
    for (auto& d : shape) d = take<std::int64_t>(is);
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw DataError("checkpoint truncated in momentum buffers");
    ck.momentum.push_back(std::move(t));
  }
  return ck;
}

// --------------------------------------------------------------------- loop

std::string to_jsonl(const IterationLog& log) {
  json d = json::array();
  for (const auto& x : log.delta) d.push_back(x.to_string());
  const json j = {{"iter", log.iter}, {"lr", log.lr},       {"L_seg", log.seg},
                  {"L_kd", log.kd},   {"L_total", log.total}, {"delta", d}};
  return j.dump();
}

namespace {

json input_stats(const Sample& s) {
  json j = json::object();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto& img = s.images[m];
    if (img.empty()) continue;
    double lo = INFINITY, hi = -INFINITY, sum = 0;
    std::size_t bad = 0;
    for (float v : img.values()) {
      if (!std::isfinite(v)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
      sum += v;
    }
    j[std::string(name_of(kModalities[m]))] = {
        {"min", lo}, {"max", hi}, {"mean", sum / double(img.size())}, {"non_finite", bad}};
  }
  return j;
}

// Keeps metrics lines of iterations before `start` when resuming.
std::ofstream open_metrics(const std::filesystem::path& file, std::int64_t start) {
  std::vector<std::string> keep;
  if (start > 0) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.contains("iter") && j["iter"].get<std::int64_t>() < start) keep.push_back(line);
    }
  }
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write " + file.string());
  for (const auto& l : keep) os << l << '\n';
  return os;
}

}  // namespace

TrainResult train(const std::vector<TrainingCase>& cases, const RunConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (cases.empty()) throw DataError("no training cases");
  const TrainConfig& tc = cfg.train;
  for (const auto& c : cases) {
    const Extent3 e = c.extent();
    if (tc.patch.d > e.d || tc.patch.h > e.h || tc.patch.w > e.w)
      throw ContractViolation("patch larger than volume of case " + c.case_id);
  }

  SegmentationNet<float> net(cfg.model, tc.seed);
  Sgd<float> sgd(tc.momentum, tc.nesterov);
  Rng rng(tc.seed ^ 0x7261696eULL);
  std::int64_t start = 0;
  const std::uint64_t hash = cfg.hash();

  if (opt.resume) {
    Checkpoint ck = Checkpoint::load(*opt.resume);
    if (ck.config_hash != hash) throw DataError("checkpoint was written with a different config");
    for (auto& [name, v] : net.params().entries()) v.mutable_value() = ck.params.get(name).value();
    sgd.buffers() = std::move(ck.momentum);
    rng.set_state(ck.rng_state);
    start = ck.iteration;
  }

  std::ofstream metrics;
  if (opt.out_dir) {
    std::filesystem::create_directories(*opt.out_dir);
    save_run_config(cfg, *opt.out_dir / "config.json");
    metrics = open_metrics(*opt.out_dir / "metrics.jsonl", start);
  }

  TrainResult result;
  const std::int64_t total = tc.total_iters();
  const double inv_b = 1.0 / tc.batch_size;
  auto snapshot = [&](std::int64_t done) {
    Checkpoint ck;
    ck.config = cfg;
    ck.config_hash = hash;
    ck.iteration = done;
    ck.epoch = done / tc.iters_per_epoch;
    ck.rng_state = rng.state();
    ck.params = net.params().cast<float>();
    ck.momentum = sgd.buffers();
    return ck;
  };

  for (std::int64_t it = start; it < total; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const int epoch = static_cast<int>(it / tc.iters_per_epoch);
    const double lr = poly_lr(epoch, tc);
    net.params().zero_grad();
    IterationLog log;
    log.iter = it;
    log.lr = lr;
    const ModalityIndicator batch_delta = sample_perturbation(rng);
    std::vector<Sample> batch;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& c = cases[rng.below(cases.size())];
      Sample s = sample_patch(c, tc.patch, rng, tc.foreground_prob);
      augment(s, rng, tc.augment);
      const ModalityIndicator delta =
          (tc.perturb_granularity == PerturbGranularity::batch || b == 0) ? batch_delta : sample_perturbation(rng);
      log.delta.push_back(delta);

      auto out = net.forward(s.images, delta);
      auto loss = total_loss(out, label_pyramid(s.labels, cfg.model.num_scales), cfg.loss);
      if (!std::isfinite(loss.breakdown.total)) {
        batch.push_back(std::move(s));
        json dump = {{"iter", it}, {"lr", lr}, {"items", json::array()}};
        for (std::size_t k = 0; k < batch.size(); ++k) {
          dump["items"].push_back({{"case_id", batch[k].case_id},
                                   {"offset", {batch[k].offset.d, batch[k].offset.h, batch[k].offset.w}},
                                   {"delta", log.delta[k].to_string()},
                                   {"inputs", input_stats(batch[k])}});
        }
        dump["L_seg_per_scale"] = loss.breakdown.seg_per_scale;
        dump["L_kd"] = loss.breakdown.kd;
        if (opt.out_dir) {
          std::ofstream os(*opt.out_dir / "nan_dump.json", std::ios::trunc);
          os << dump.dump(2) << '\n';
        }
        throw NumericError("non-finite loss at iteration " + std::to_string(it) + ": " + dump.dump());
      }
      backward(ops::scale(loss.total, inv_b));
      log.seg += inv_b * loss.breakdown.seg;
      log.kd += inv_b * loss.breakdown.kd;
      log.total += inv_b * loss.breakdown.total;
      batch.push_back(std::move(s));
    }
    if (tc.grad_clip > 0) {
      const double gn = grad_norm(net.params());
      if (!std::isfinite(gn)) throw NumericError("non-finite gradient at iteration " + std::to_string(it));
      if (gn > tc.grad_clip) {
        const auto f = static_cast<float>(tc.grad_clip / gn);
        for (auto& [name, v] : net.params().entries()) {
          for (auto& g : v.mutable_grad().values()) g *= f;
        }
      }
    }
    sgd.step(net.params(), lr);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics.is_open()) metrics << to_jsonl(log) << '\n' << std::flush;
    if (opt.on_iteration) opt.on_iteration(log);
    result.log.push_back(std::move(log));

    if ((it + 1) % tc.iters_per_epoch == 0) {
      if (opt.out_dir) snapshot(it + 1).save(*opt.out_dir / "checkpoint.bin");
      if (opt.stop_after_epoch >= 0 && (it + 1) / tc.iters_per_epoch >= opt.stop_after_epoch) {
        result.checkpoint = snapshot(it + 1);
        return result;
      }
    }
  }
  result.checkpoint = snapshot(total);
  return result;
}

std::vector<TrainingCase> load_training_cases(const DatasetManifest& manifest, const std::string& split) {
  std::vector<TrainingCase> out;
  for (const auto& p : manifest.resolve(split)) out.push_back(TrainingCase::from_record(load_case(p)));
  return out;
}

TrainResult train(const DatasetManifest& manifest, const RunConfig& cfg, const TrainOptions& opt) {
  return train(load_training_cases(manifest, "train"), cfg, opt);
}

}  // namespace demoseg
