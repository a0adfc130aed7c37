#include "st/unlearnable.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "st/engine.hpp"
#include "st/optimizer.hpp"

namespace st {

const char* pert_mode_name(PertMode m) { return m == PertMode::sample_wise ? "sample" : "class"; }
const char* pert_family_name(PertFamily f) {
  switch (f) {
    case PertFamily::em: return "em";
    case PertFamily::rem: return "rem";
    case PertFamily::sp: return "sp";
    case PertFamily::ops: return "ops";
  }
  return "?";
}

PertMode pert_mode_from(const std::string& s) {
  if (s == "sample" || s == "sample-wise") return PertMode::sample_wise;
  if (s == "class" || s == "class-wise") return PertMode::class_wise;
  fail(Err::bad_config, "unknown perturbation mode: " + s);
}

PertFamily pert_family_from(const std::string& s) {
  if (s == "em") return PertFamily::em;
  if (s == "rem") return PertFamily::rem;
  if (s == "sp") return PertFamily::sp;
  if (s == "ops") return PertFamily::ops;
  fail(Err::bad_config, "unknown perturbation family: " + s);
}

float PerturbationSet::max_abs() const {
  float m = 0.0f;
  for (const auto& d : deltas)
    for (long i = 0; i < d.size(); ++i) m = std::max(m, std::abs(d[i]));
  return m;
}

namespace {

// Clamp mask: pass-through where the pre-clip value is strictly inside [0,1].
void clip01_with_mask(Tensor<float>& t, std::vector<unsigned char>& mask) {
  mask.assign(size_t(t.size()), 0);
  for (long i = 0; i < t.size(); ++i) {
    const float v = t[i];
    if (v > 0.0f && v < 1.0f) mask[size_t(i)] = 1;
    t[i] = std::min(1.0f, std::max(0.0f, v));
  }
}

void apply_mask(Tensor<float>& g, const std::vector<unsigned char>& mask) {
  for (long i = 0; i < g.size(); ++i)
    if (!mask[size_t(i)]) g[i] = 0.0f;
}

struct MinMinContext {
  const ImageDataset& ds;
  Network<float>& net;
  float eps_u;
  float eps_a;
  PertMode mode;
  PertFamily family;
  const GenConfig& cfg;
  float pert_step;
  float adv_step;

  std::vector<Tensor<float>> deltas;
  long checks = 0;

  const Tensor<float>& delta_for(int sample) const {
    return deltas[mode == PertMode::sample_wise ? size_t(sample) : size_t(ds.labels[size_t(sample)])];
  }

  void project(Tensor<float>& d, float bound) {
    d.flat() = d.flat().min(bound).max(-bound);
    require(d.flat().abs().maxCoeff() <= bound, Err::range_out_of_bounds, "budget violated after projection");
    ++checks;
  }

  // Batch of clip(x + delta) with the clamp masks.
  Tensor<float> perturbed_batch(const std::vector<int>& idx, std::vector<unsigned char>* mask) const {
    Tensor<float> batch = make_batch(ds, idx, nullptr, 0, 0);
    const long row = ds.image_size();
    for (size_t b = 0; b < idx.size(); ++b) {
      const Tensor<float>& d = delta_for(idx[b]);
      float* p = batch.data() + long(b) * row;
      for (long j = 0; j < row; ++j) p[j] += d[j];
    }
    if (mask) {
      clip01_with_mask(batch, *mask);
    } else {
      batch.flat() = batch.flat().min(1.0f).max(0.0f);
    }
    return batch;
  }

  // CG transform per sample with stream (seed, tag, round, step, dataset index).
  Tensor<float> transform_batch(const Tensor<float>& batch, const std::vector<int>& idx, uint64_t tag, int round,
                                int step, std::vector<CgContext<float>>* ctxs) const {
    if (!cfg.with_cg) return batch;
    Tensor<float> out(batch.shape());
    const long row = batch.size() / batch.dim(0);
    if (ctxs) ctxs->assign(idx.size(), {});
    for (size_t b = 0; b < idx.size(); ++b) {
      Rng rng = derive_rng(cfg.seed, tag, uint64_t(round), uint64_t(step), uint64_t(idx[b]));
      const CgDraw<float> draw = sample_cg(cfg.cg, rng);
      Tensor<float> img({batch.dim(1), batch.dim(2), batch.dim(3)},
                        std::vector<float>(batch.data() + long(b) * row, batch.data() + long(b) * row + row));
      Tensor<float> t = cg_apply(img, draw, ctxs ? &(*ctxs)[b] : nullptr);
      std::copy(t.data(), t.data() + row, out.data() + long(b) * row);
    }
    return out;
  }

  Tensor<float> transform_backward(const Tensor<float>& grad, const std::vector<CgContext<float>>& ctxs) const {
    if (!cfg.with_cg) return grad;
    Tensor<float> out(grad.shape());
    const int C = grad.dim(1);
    const long HW = long(grad.dim(2)) * grad.dim(3);
    const long row = C * HW;
    for (size_t b = 0; b < ctxs.size(); ++b) {
      Tensor<float> g({C, grad.dim(2), grad.dim(3)},
                      std::vector<float>(grad.data() + long(b) * row, grad.data() + long(b) * row + row));
      Tensor<float> gi = cg_backward(g, ctxs[b], C, HW);
      std::copy(gi.data(), gi.data() + row, out.data() + long(b) * row);
    }
    return out;
  }
};

float perturbed_error(const MinMinContext& ctx) {
  const int n = ctx.ds.size();
  int correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < n; start += 256) {
    const int end = std::min(n, start + 256);
    idx.resize(size_t(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> batch = ctx.perturbed_batch(idx, nullptr);
    std::vector<int> labels = batch_labels(ctx.ds, idx);
    Tensor<float> logits = forward(ctx.net, batch);
    correct += correct_count(logits, labels);
  }
  return 1.0f - float(correct) / float(n);
}

// Worst-case additive noise for the current deltas, ascending through the
// transform when with_cg is set. Returns sigma; draws with tag fixed per
// delta-step so the transform is held constant across the inner ascent.
Tensor<float> inner_max_sigma(MinMinContext& ctx, const Tensor<float>& w, const std::vector<int>& idx,
                              const std::vector<int>& labels, int round, int step) {
  Tensor<float> sigma(w.shape());
  std::vector<unsigned char> mask;
  std::vector<CgContext<float>> ctxs;
  for (int s = 0; s < ctx.cfg.adv_steps; ++s) {
    Tensor<float> u = w;
    u.flat() += sigma.flat();
    clip01_with_mask(u, mask);
    Tensor<float> v = ctx.transform_batch(u, idx, 0xc6, round, step, &ctxs);
    Tensor<float> gv;
    compute_grads(ctx.net, v, labels, nullptr, &gv);
    Tensor<float> gu = ctx.transform_backward(gv, ctxs);
    apply_mask(gu, mask);
    sigma.flat() += ctx.adv_step * gu.flat().sign();
    ctx.project(sigma, ctx.eps_a);
  }
  return sigma;
}

GenResult generate_min_min(const ImageDataset& ds, Network<float>& net, float eps_u, float eps_a, PertMode mode,
                           PertFamily family, const GenConfig& cfg) {
  require(eps_u >= 0.0f, Err::bad_config, "epsilon must be nonnegative");
  require(eps_a >= 0.0f && eps_a <= std::max(eps_u, 0.0f) + 1e-9f || eps_u == 0.0f, Err::bad_config,
          "adversarial budget must not exceed the perturbation budget");
  require(cfg.pert_steps >= 1 && cfg.model_steps_per_round >= 1, Err::bad_config, "step counts must be >= 1");
  require(!(cfg.with_cg && cfg.cg.hue > 0), Err::bad_config, "hue jitter has no gradient path; disable it for generation");

  MinMinContext ctx{ds,   net,    eps_u, eps_a, mode, family, cfg, cfg.pert_step_size > 0 ? cfg.pert_step_size : eps_u / 8.0f,
                    cfg.adv_step_size > 0 ? cfg.adv_step_size : eps_a / 4.0f};
  const int n_deltas = mode == PertMode::sample_wise ? ds.size() : ds.class_count;
  ctx.deltas.assign(size_t(n_deltas), Tensor<float>({ds.channels(), ds.height(), ds.width()}));

  GenResult res;
  res.pset.mode = mode;
  res.pset.family = family;
  res.pset.epsilon = eps_u;
  if (eps_u == 0.0f) {  // degenerate budget: deltas stay identically zero
    res.final_error = perturbed_error(ctx);
    res.converged = res.final_error < cfg.stop_error;
  }

  OptimizerState<float> opt = make_optimizer(net);
  const std::vector<double> model_lr(size_t(net.depth()), 0.1);
  const long row = ds.image_size();

  for (int round = 1; eps_u > 0.0f && round <= cfg.max_rounds; ++round) {
    // (a) surrogate model steps on the current perturbed data
    {
      std::vector<int> order(static_cast<size_t>(ds.size()));
      std::iota(order.begin(), order.end(), 0);
      Rng r = derive_rng(cfg.seed, 0x3d, uint64_t(round));
      r.shuffle(order);
      int cursor = 0;
      for (int step_m = 0; step_m < cfg.model_steps_per_round; ++step_m) {
        std::vector<int> idx;
        for (int b = 0; b < cfg.batch_size; ++b) {
          idx.push_back(order[size_t(cursor)]);
          cursor = (cursor + 1) % int(order.size());
        }
        std::vector<int> labels = batch_labels(ds, idx);
        Tensor<float> batch = ctx.perturbed_batch(idx, nullptr);
        if (eps_a > 0) {
          Rng arng = derive_rng(cfg.seed, 0xa7, uint64_t(round), uint64_t(step_m));
          batch = pgd_attack(net, batch, labels, eps_a, ctx.adv_step, cfg.adv_steps, arng);
        }
        batch = ctx.transform_batch(batch, idx, 0xc7, round, step_m, nullptr);
        Gradients<float> grads = zero_gradients(net);
        compute_grads(net, batch, labels, &grads, nullptr);
        sgd_step(net, grads, opt, model_lr);
      }
    }

    // (b) projected sign descent on the deltas
    {
      std::vector<int> order(static_cast<size_t>(ds.size()));
      std::iota(order.begin(), order.end(), 0);
      Rng r = derive_rng(cfg.seed, 0x4e, uint64_t(round));
      r.shuffle(order);
      std::vector<unsigned char> mask1;
      for (int start = 0; start < int(order.size()); start += cfg.batch_size) {
        const int end = std::min(int(order.size()), start + cfg.batch_size);
        std::vector<int> idx(order.begin() + start, order.begin() + end);
        std::vector<int> labels = batch_labels(ds, idx);
        for (int step = 0; step < cfg.pert_steps; ++step) {
          Tensor<float> w = ctx.perturbed_batch(idx, &mask1);
          Tensor<float> gdelta;
          if (eps_a > 0) {
            Tensor<float> sigma = inner_max_sigma(ctx, w, idx, labels, round, step);
            Tensor<float> u = w;
            u.flat() += sigma.flat();
            std::vector<unsigned char> mask2;
            clip01_with_mask(u, mask2);
            std::vector<CgContext<float>> ctxs;
            Tensor<float> v = ctx.transform_batch(u, idx, 0xc6, round, step, &ctxs);
            Tensor<float> gv;
            compute_grads(net, v, labels, nullptr, &gv);
            gdelta = ctx.transform_backward(gv, ctxs);
            apply_mask(gdelta, mask2);
          } else {
            std::vector<CgContext<float>> ctxs;
            Tensor<float> v = ctx.transform_batch(w, idx, 0xc6, round, step, &ctxs);
            Tensor<float> gv;
            compute_grads(net, v, labels, nullptr, &gv);
            gdelta = ctx.transform_backward(gv, ctxs);
          }
          apply_mask(gdelta, mask1);

          if (mode == PertMode::sample_wise) {
            for (size_t b = 0; b < idx.size(); ++b) {
              Tensor<float>& d = ctx.deltas[size_t(idx[b])];
              const float* g = gdelta.data() + long(b) * row;
              for (long j = 0; j < row; ++j) d[j] -= ctx.pert_step * (g[j] > 0 ? 1.0f : (g[j] < 0 ? -1.0f : 0.0f));
              ctx.project(d, eps_u);
            }
          } else {
            // class-wise: descend on the mean gradient of the classes present
            std::unordered_map<int, std::pair<Tensor<float>, int>> by_class;
            for (size_t b = 0; b < idx.size(); ++b) {
              const int c = ds.labels[size_t(idx[b])];
              auto it = by_class.find(c);
              if (it == by_class.end())
                it = by_class.emplace(c, std::make_pair(Tensor<float>({ds.channels(), ds.height(), ds.width()}), 0))
                         .first;
              const float* g = gdelta.data() + long(b) * row;
              for (long j = 0; j < row; ++j) it->second.first[j] += g[j];
              ++it->second.second;
            }
            std::vector<int> classes;
            for (auto& kv : by_class) classes.push_back(kv.first);
            std::sort(classes.begin(), classes.end());  // fixed reduction order
            for (int c : classes) {
              auto& [gsum, count] = by_class[c];
              Tensor<float>& d = ctx.deltas[size_t(c)];
              for (long j = 0; j < row; ++j) {
                const float g = gsum[j] / float(count);
                d[j] -= ctx.pert_step * (g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f));
              }
              ctx.project(d, eps_u);
            }
          }
        }
      }
    }

    res.rounds = round;
    res.final_error = perturbed_error(ctx);
    if (res.final_error < cfg.stop_error) {
      res.converged = true;
      break;
    }
  }

  res.pset.deltas = std::move(ctx.deltas);
  res.pset.keys.resize(size_t(n_deltas));
  std::iota(res.pset.keys.begin(), res.pset.keys.end(), 0u);
  res.projection_checks = ctx.checks;
  return res;
}

}  // namespace

GenResult gen_em(const ImageDataset& ds, Network<float>& net, float epsilon, PertMode mode, const GenConfig& cfg) {
  return generate_min_min(ds, net, epsilon, 0.0f, mode, PertFamily::em, cfg);
}

GenResult gen_rem(const ImageDataset& ds, Network<float>& net, float eps_unlearnable, float eps_adv,
                  const GenConfig& cfg) {
  return generate_min_min(ds, net, eps_unlearnable, eps_adv, PertMode::sample_wise, PertFamily::rem, cfg);
}

PerturbationSet gen_sp(int channels, int height, int width, int k, float epsilon, uint64_t seed) {
  require(epsilon > 0, Err::bad_config, "epsilon must be positive");
  constexpr int kGrid = 8;
  PerturbationSet p;
  p.mode = PertMode::class_wise;
  p.family = PertFamily::sp;
  p.epsilon = epsilon;
  std::vector<std::vector<int8_t>> grids;
  for (int c = 0; c < k; ++c) {
    std::vector<int8_t> grid(size_t(channels) * kGrid * kGrid);
    for (int attempt = 0;; ++attempt) {
      Rng rng = derive_rng(seed, 0x5b, uint64_t(c), uint64_t(attempt));
      for (auto& v : grid) v = rng.chance(0.5) ? int8_t(1) : int8_t(-1);
      if (std::none_of(grids.begin(), grids.end(), [&](const auto& g) { return g == grid; })) break;
      require(attempt < 64, Err::bad_config, "could not draw distinct patterns");
    }
    grids.push_back(grid);
    Tensor<float> d({channels, height, width});
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const int gy = y * kGrid / height, gx = x * kGrid / width;
          d[(long(ch) * height + y) * width + x] = epsilon * float(grid[size_t((ch * kGrid + gy) * kGrid + gx)]);
        }
    p.deltas.push_back(std::move(d));
    p.keys.push_back(uint32_t(c));
  }
  return p;
}

PerturbationSet gen_ops(int channels, int height, int width, int k, uint64_t seed) {
  require(k <= height * width, Err::too_many_classes,
          "more classes than pixels: " + std::to_string(k) + " > " + std::to_string(height * width));
  std::vector<int> positions(size_t(height) * size_t(width));
  std::iota(positions.begin(), positions.end(), 0);
  Rng rng = derive_rng(seed, 0x09);
  rng.shuffle(positions);
  PerturbationSet p;
  p.mode = PertMode::class_wise;
  p.family = PertFamily::ops;
  p.epsilon = 1.0f;
  for (int c = 0; c < k; ++c) {
    Tensor<float> d({channels, height, width});
    const int pos = positions[size_t(c)];
    const float v = rng.chance(0.5) ? 1.0f : -1.0f;  // push to white or black
    for (int ch = 0; ch < channels; ++ch) d[long(ch) * height * width + pos] = v;
    p.deltas.push_back(std::move(d));
    p.keys.push_back(uint32_t(c));
  }
  return p;
}

ImageDataset apply_perturbations(const ImageDataset& ds, const PerturbationSet& pset, double ratio, uint64_t seed) {
  require(ratio >= 0.0 && ratio <= 1.0, Err::bad_config, "ratio must be in [0,1]");
  for (const auto& d : pset.deltas)
    require(d.size() == ds.image_size(), Err::shape_mismatch,
            "delta shape " + d.shape_str() + " incompatible with images");
  std::unordered_map<uint32_t, const Tensor<float>*> by_key;
  for (size_t i = 0; i < pset.deltas.size(); ++i) by_key[pset.keys[i]] = &pset.deltas[i];

  ImageDataset out = ds;
  const int n = ds.size();
  const int m = int(std::llround(ratio * n));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, 0xa11);
  rng.shuffle(order);
  for (int j = 0; j < m; ++j) {
    const int i = order[size_t(j)];
    const uint32_t key = pset.mode == PertMode::class_wise ? uint32_t(ds.labels[size_t(i)]) : uint32_t(i);
    auto it = by_key.find(key);
    require(it != by_key.end(), Err::bad_config, "no delta for key " + std::to_string(key));
    float* p = out.image_ptr(i);
    const Tensor<float>& d = *it->second;
    for (long t = 0; t < d.size(); ++t) p[t] = std::min(1.0f, std::max(0.0f, p[t] + d[t]));
  }
  return out;
}

}  // namespace st
