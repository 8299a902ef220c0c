#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "scca/dataset.hpp"

namespace scca::data {

AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t image_size, Rng& rng) {
  const double S = static_cast<double>(image_size);
  const double shift = cfg.max_translation * S / 256.0;
  AugmentParams p;
  p.angle_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  p.tx = rng.uniform(-shift, shift);
  p.ty = rng.uniform(-shift, shift);
  p.scale = 1.0 + rng.uniform(-cfg.max_rescale, cfg.max_rescale);
  p.flip = rng.bernoulli(cfg.flip_prob);
  p.occlude = rng.bernoulli(cfg.occlusion_prob);
  p.occ_side = cfg.occlusion_fraction * S;
  p.occ_x = rng.uniform(0.0, S - p.occ_side);
  p.occ_y = rng.uniform(0.0, S - p.occ_side);
  p.occ_seed = rng.next();
  p.frame_size = S;
  return p;
}

LandmarkSample apply_augment(const LandmarkSample& sample, const AugmentParams& params,
                             const std::vector<std::size_t>& mirror) {
  if (params.is_identity()) return sample;
  const std::size_t n = sample.size();
  if (params.flip) {
    if (mirror.size() != n) throw std::invalid_argument("augment: flipping requires a mirror table for every landmark");
    validate_mirror_table(mirror, n);
  }
  if (!(params.scale > 0)) throw std::invalid_argument("augment: scale must be positive");

  const std::size_t Sz = sample.image_size();
  double S = static_cast<double>(Sz);
  if (Sz == 0) {
    if (!(params.frame_size > 0)) throw std::invalid_argument("augment: geometry-only sample needs a frame size");
    S = params.frame_size;
  }
  const double c = S / 2.0;
  const double th = params.angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(th), sa = std::sin(th);

  auto forward = [&](Point p) {
    if (params.flip) p.x = S - p.x;
    const double ux = p.x - c, uy = p.y - c;
    return Point{c + params.scale * (ca * ux - sa * uy) + params.tx, c + params.scale * (sa * ux + ca * uy) + params.ty};
  };

  LandmarkSample out;
  out.id = sample.id;
  out.weight = sample.weight;
  out.landmarks.resize(n);
  out.visibility.resize(n);
  out.in_frame.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = params.flip ? mirror[i] : i;
    out.landmarks[i] = forward(sample.landmarks[src]);
    out.visibility[i] = sample.visibility.empty() ? true : sample.visibility[src];
    const Point& q = out.landmarks[i];
    out.in_frame[i] = q.x >= 0 && q.x <= S && q.y >= 0 && q.y <= S;
  }
  {
    const BBox& b = sample.bbox;
    const Point corners[4] = {forward({b.x_min, b.y_min}), forward({b.x_max, b.y_min}), forward({b.x_min, b.y_max}),
                              forward({b.x_max, b.y_max})};
    BBox nb{corners[0].x, corners[0].y, corners[0].x, corners[0].y};
    for (const Point& q : corners) {
      nb.x_min = std::min(nb.x_min, q.x);
      nb.y_min = std::min(nb.y_min, q.y);
      nb.x_max = std::max(nb.x_max, q.x);
      nb.y_max = std::max(nb.y_max, q.y);
    }
    out.bbox = nb;
  }

  if (Sz > 0) {
    out.image = nk::Tensor(sample.image.shape());
    const std::size_t C = sample.image.dim(0);
    auto at = [&](std::size_t ch, long y, long x) {
      y = std::clamp<long>(y, 0, static_cast<long>(Sz) - 1);
      x = std::clamp<long>(x, 0, static_cast<long>(Sz) - 1);
      return sample.image[(ch * Sz + static_cast<std::size_t>(y)) * Sz + static_cast<std::size_t>(x)];
    };
    for (std::size_t y = 0; y < Sz; ++y)
      for (std::size_t x = 0; x < Sz; ++x) {
        // Inverse map of the destination pixel centre.
        const double qx = x + 0.5 - params.tx - c, qy = y + 0.5 - params.ty - c;
        double sx = c + (ca * qx + sa * qy) / params.scale;
        const double sy = c + (-sa * qx + ca * qy) / params.scale;
        if (params.flip) sx = S - sx;
        const double u = sx - 0.5, v = sy - 0.5;
        const double fu = std::floor(u), fv = std::floor(v);
        const double au = u - fu, av = v - fv;
        const long iu = static_cast<long>(fu), iv = static_cast<long>(fv);
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double top = at(ch, iv, iu) * (1 - au) + at(ch, iv, iu + 1) * au;
          const double bot = at(ch, iv + 1, iu) * (1 - au) + at(ch, iv + 1, iu + 1) * au;
          out.image[(ch * Sz + y) * Sz + x] = top * (1 - av) + bot * av;
        }
      }
  }

  if (params.occlude) {
    Rng occ(params.occ_seed);
    apply_occlusion(out, params.occ_x, params.occ_y, params.occ_side, occ);
  }
  return out;
}

LandmarkSample augment(const LandmarkSample& sample, const AugmentConfig& cfg, const std::vector<std::size_t>& mirror,
                       Rng& rng) {
  if (cfg.flip_prob > 0 && mirror.size() != sample.size()) {
    throw std::invalid_argument("augment: flipping enabled but no mirror table given");
  }
  const std::size_t S = sample.image_size();
  return apply_augment(sample, sample_augment(cfg, S ? S : 256, rng), mirror);
}

}  // namespace scca::data
