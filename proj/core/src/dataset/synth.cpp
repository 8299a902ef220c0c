#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "scca/dataset.hpp"

namespace scca::data {
namespace {

constexpr double kPi = std::numbers::pi;

std::size_t even_floor(double v) {
  auto n = static_cast<std::size_t>(std::floor(v));
  return n - n % 2;
}

struct Counts {
  std::size_t contour, brow, bridge, nose_base, eye, mouth_outer, mouth_inner;
};

// Reference counts at N = 68 are 17/5/4/5/6/12/8; other N scale them and give
// the remainder to the contour.
Counts allocate(std::size_t n) {
  const double f = static_cast<double>(n) / 68.0;
  Counts c{};
  c.brow = static_cast<std::size_t>(std::floor(5 * f));
  c.bridge = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(4 * f)));
  c.nose_base = static_cast<std::size_t>(std::floor(5 * f));
  c.eye = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(6 * f)));
  c.mouth_outer = std::max<std::size_t>(2, even_floor(12 * f));
  c.mouth_inner = even_floor(8 * f);
  const std::size_t rest = 2 * c.brow + c.bridge + c.nose_base + 2 * c.eye + c.mouth_outer + c.mouth_inner;
  if (rest + 3 > n) throw std::logic_error("face layout allocation leaves too few contour points");
  c.contour = n - rest;
  return c;
}

Point mirror_point(const Point& p) { return {1.0 - p.x, p.y}; }

}  // namespace

FaceLayout make_face_layout(std::size_t n) {
  if (n < 10) throw std::invalid_argument("synthetic face layout needs at least 10 landmarks, got " + std::to_string(n));
  const Counts c = allocate(n);
  FaceLayout L;
  L.base.reserve(n);
  L.mirror.assign(n, 0);

  auto start_stroke = [&](bool closed) {
    L.strokes.emplace_back();
    L.stroke_closed.push_back(closed);
  };
  auto push = [&](Point p, FacePart part) {
    L.base.push_back(p);
    L.part.push_back(part);
    L.strokes.back().push_back(L.base.size() - 1);
    return L.base.size() - 1;
  };

  // Contour: lower half-ellipse from the left temple through the chin.
  start_stroke(false);
  const std::size_t contour0 = L.base.size();
  for (std::size_t i = 0; i < c.contour; ++i) {
    const double th = kPi - kPi * static_cast<double>(i) / static_cast<double>(c.contour - 1);
    push({0.5 + 0.46 * std::cos(th), 0.42 + 0.56 * std::sin(th)}, FacePart::Contour);
  }
  for (std::size_t i = 0; i < c.contour; ++i) L.mirror[contour0 + i] = contour0 + c.contour - 1 - i;

  // Brows: left then right, right[j] = mirror(left[j]).
  std::vector<Point> brow;
  for (std::size_t j = 0; j < c.brow; ++j) {
    const double t = c.brow == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(c.brow - 1);
    brow.push_back({0.14 + 0.28 * t, 0.25 - 0.05 * std::sin(kPi * t)});
  }
  if (c.brow > 0) {
    start_stroke(false);
    const std::size_t l0 = L.base.size();
    for (const Point& p : brow) push(p, FacePart::Brow);
    start_stroke(false);
    const std::size_t r0 = L.base.size();
    for (const Point& p : brow) push(mirror_point(p), FacePart::Brow);
    for (std::size_t j = 0; j < c.brow; ++j) {
      L.mirror[l0 + j] = r0 + j;
      L.mirror[r0 + j] = l0 + j;
    }
  }

  // Nose bridge on the symmetry axis.
  start_stroke(false);
  for (std::size_t j = 0; j < c.bridge; ++j) {
    const double t = c.bridge == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(c.bridge - 1);
    const std::size_t id = push({0.5, 0.36 + 0.22 * t}, FacePart::NoseBridge);
    L.mirror[id] = id;
  }

  // Nose base: symmetric row under the bridge.
  if (c.nose_base > 0) {
    start_stroke(false);
    const std::size_t b0 = L.base.size();
    for (std::size_t j = 0; j < c.nose_base; ++j) {
      const double t = c.nose_base == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(c.nose_base - 1);
      push({0.39 + 0.22 * t, 0.63 + 0.03 * std::sin(kPi * t)}, FacePart::NoseBase);
    }
    for (std::size_t j = 0; j < c.nose_base; ++j) L.mirror[b0 + j] = b0 + c.nose_base - 1 - j;
  }

  // Eyes: rings starting at the outer corner; right[j] = mirror(left[j]).
  std::vector<Point> eye;
  for (std::size_t j = 0; j < c.eye; ++j) {
    const double th = kPi + 2.0 * kPi * static_cast<double>(j) / static_cast<double>(c.eye);
    eye.push_back({0.30 + 0.085 * std::cos(th), 0.38 + 0.04 * std::sin(th)});
  }
  start_stroke(true);
  const std::size_t le0 = L.base.size();
  for (const Point& p : eye) push(p, FacePart::Eye);
  start_stroke(true);
  const std::size_t re0 = L.base.size();
  for (const Point& p : eye) push(mirror_point(p), FacePart::Eye);
  for (std::size_t j = 0; j < c.eye; ++j) {
    L.mirror[le0 + j] = re0 + j;
    L.mirror[re0 + j] = le0 + j;
  }
  L.left_eye_outer = le0;
  L.right_eye_outer = re0;

  // Mouth rings starting at the left corner; index j mirrors to (m/2 - j) mod m.
  auto mouth_ring = [&](std::size_t m, double rx, double ry, FacePart part) {
    if (m == 0) return;
    start_stroke(true);
    const std::size_t m0 = L.base.size();
    for (std::size_t j = 0; j < m; ++j) {
      const double th = kPi + 2.0 * kPi * static_cast<double>(j) / static_cast<double>(m);
      push({0.5 + rx * std::cos(th), 0.79 + ry * std::sin(th)}, part);
    }
    for (std::size_t j = 0; j < m; ++j) L.mirror[m0 + j] = m0 + (m / 2 + m - j) % m;
  };
  mouth_ring(c.mouth_outer, 0.17, 0.07, FacePart::MouthOuter);
  mouth_ring(c.mouth_inner, 0.10, 0.03, FacePart::MouthInner);

  // Snap exact mirror images so the layout is symmetric to the last bit.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = L.mirror[i];
    if (i < j) L.base[j] = mirror_point(L.base[i]);
    if (i == j) L.base[i].x = 0.5;
  }
  validate_mirror_table(L.mirror, n);
  return L;
}

SynthConfig default_synth_config(std::size_t n_landmarks) {
  SynthConfig cfg;
  cfg.n_landmarks = n_landmarks;
  FaceLayout layout = make_face_layout(n_landmarks);
  cfg.eye_indices = {layout.left_eye_outer, layout.right_eye_outer};
  cfg.mirror = layout.mirror;
  return cfg;
}

void validate(const SynthConfig& cfg) {
  if (cfg.n_landmarks < 10) throw std::invalid_argument("synth: n_landmarks must be >= 10");
  if (cfg.image_size < 8) throw std::invalid_argument("synth: image_size must be >= 8");
  if (cfg.deformation_modes > kMaxDeformationModes) {
    throw std::invalid_argument("synth: at most " + std::to_string(kMaxDeformationModes) + " deformation modes");
  }
  if (cfg.deformation_amplitude < 0 || cfg.noise_sigma < 0) throw std::invalid_argument("synth: negative spread");
  if (cfg.occlusion_prob < 0 || cfg.occlusion_prob > 1) throw std::invalid_argument("synth: occlusion_prob outside [0, 1]");
  if (cfg.occlusion_fraction <= 0 || cfg.occlusion_fraction > 1) {
    throw std::invalid_argument("synth: occlusion_fraction outside (0, 1]");
  }
  if (!(cfg.face_scale_min > 0) || cfg.face_scale_max < cfg.face_scale_min || cfg.face_scale_max > 1) {
    throw std::invalid_argument("synth: invalid face scale range");
  }
  const auto [a, b] = cfg.eye_indices;
  if (a == b || a >= cfg.n_landmarks || b >= cfg.n_landmarks) {
    throw std::invalid_argument("synth: eye indices must be distinct and < N");
  }
  validate_mirror_table(cfg.mirror, cfg.n_landmarks);
}

namespace {

// Displacement of a unit-box landmark under deformation mode m.
Point mode_field(std::size_t m, const Point& p, FacePart part) {
  const double cx = p.x - 0.5, cy = p.y - 0.5;
  const double centrality = 1.0 - 4.0 * cx * cx;
  switch (m) {
    case 0: return {cx, 0.0};                                  // face width
    case 1: return {0.0, cy};                                  // face length
    case 2:                                                    // jaw width
      return part == FacePart::Contour ? Point{cx * std::max(0.0, p.y - 0.42) * 2.0, 0.0} : Point{};
    case 3:                                                    // mouth opening
      return (part == FacePart::MouthOuter || part == FacePart::MouthInner) ? Point{0.0, (p.y - 0.79) * 3.0}
                                                                            : Point{};
    case 4:                                                    // smile
      return (part == FacePart::MouthOuter || part == FacePart::MouthInner) ? Point{0.0, -cx * cx * 4.0} : Point{};
    case 5: return part == FacePart::Eye ? Point{0.0, (p.y - 0.38) * 2.5} : Point{};  // eye opening
    case 6: return part == FacePart::Contour ? Point{} : Point{0.5 * centrality, 0.0};  // yaw-like shift
    case 7: return part == FacePart::Contour ? Point{} : Point{0.0, 0.5 * centrality * (cy + 0.2)};  // pitch-like
    case 8: return part == FacePart::Brow ? Point{0.0, -1.0} : Point{};  // brow raise
    default: return {};
  }
}

constexpr std::array<double, kMaxDeformationModes> kModeSpread = {0.08, 0.06, 0.10, 0.10, 0.04, 0.10, 0.06, 0.06, 0.02};

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

bool inside_polygon(double px, double py, const std::vector<Point>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

using Color = std::array<double, 3>;

void blend(nk::Tensor& img, std::size_t S, std::size_t x, std::size_t y, const Color& c, double alpha) {
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double& v = img[(ch * S + y) * S + x];
    v = v * (1.0 - alpha) + c[ch] * alpha;
  }
}

nk::Tensor render_face(const FaceLayout& layout, const std::vector<Point>& pts, std::size_t S, Rng& rng) {
  nk::Tensor img({3, S, S});
  const double Sd = static_cast<double>(S);

  // Textured background.
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double base = rng.uniform(0.25, 0.65);
    std::array<double, 3> amp{}, fx{}, fy{}, ph{};
    for (std::size_t k = 0; k < 3; ++k) {
      amp[k] = rng.uniform(0.0, 0.08);
      fx[k] = rng.uniform(-3.0, 3.0) * 2.0 * kPi / Sd;
      fy[k] = rng.uniform(-3.0, 3.0) * 2.0 * kPi / Sd;
      ph[k] = rng.uniform(0.0, 2.0 * kPi);
    }
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        double v = base;
        for (std::size_t k = 0; k < 3; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img[(ch * S + y) * S + x] = v;
      }
  }
  for (double& v : img.data()) v += 0.02 * rng.normal();

  // Skin region: contour closed by a forehead arc.
  const Color skin = {rng.uniform(0.55, 0.85), rng.uniform(0.40, 0.65), rng.uniform(0.30, 0.50)};
  std::vector<Point> poly;
  std::vector<std::size_t> contour;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (layout.part[i] == FacePart::Contour) contour.push_back(i);
  for (std::size_t i : contour) poly.push_back(pts[i]);
  {
    const Point l = pts[contour.front()], r = pts[contour.back()];
    const double vx = r.x - l.x, vy = r.y - l.y;
    // Upward normal: away from the chin.
    const Point chin = pts[contour[contour.size() / 2]];
    double nx = -vy, ny = vx;
    const Point mid{(l.x + r.x) / 2, (l.y + r.y) / 2};
    if ((chin.x - mid.x) * nx + (chin.y - mid.y) * ny > 0) {
      nx = -nx;
      ny = -ny;
    }
    for (int k = 1; k < 9; ++k) {
      const double t = 1.0 - k / 9.0;
      const double lift = 0.45 * std::sin(kPi * t);
      poly.push_back({l.x + vx * t + nx * lift, l.y + vy * t + ny * lift});
    }
  }
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x)
      if (inside_polygon(x + 0.5, y + 0.5, poly)) blend(img, S, x, y, skin, 0.85);

  auto part_color = [&](FacePart p) -> Color {
    switch (p) {
      case FacePart::Contour: return {skin[0] * 0.55, skin[1] * 0.55, skin[2] * 0.55};
      case FacePart::Brow: return {0.22, 0.15, 0.10};
      case FacePart::NoseBridge:
      case FacePart::NoseBase: return {skin[0] * 0.65, skin[1] * 0.55, skin[2] * 0.55};
      case FacePart::Eye: return {0.10, 0.10, 0.16};
      case FacePart::MouthOuter: return {0.70, 0.18, 0.22};
      case FacePart::MouthInner: return {0.35, 0.05, 0.08};
    }
    return {0, 0, 0};
  };

  const double sigma = std::max(0.5, 0.6 * Sd / 64.0);
  for (std::size_t s = 0; s < layout.strokes.size(); ++s) {
    const auto& ids = layout.strokes[s];
    if (ids.empty()) continue;
    std::vector<std::pair<Point, Point>> segs;
    for (std::size_t k = 0; k + 1 < ids.size(); ++k) segs.push_back({pts[ids[k]], pts[ids[k + 1]]});
    if (layout.stroke_closed[s] && ids.size() > 2) segs.push_back({pts[ids.back()], pts[ids.front()]});
    if (segs.empty()) segs.push_back({pts[ids[0]], pts[ids[0]]});
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (std::size_t id : ids) {
      x0 = std::min(x0, pts[id].x);
      y0 = std::min(y0, pts[id].y);
      x1 = std::max(x1, pts[id].x);
      y1 = std::max(y1, pts[id].y);
    }
    const double pad = 3.0 * sigma + 1.0;
    const auto lo_x = static_cast<long>(std::floor(std::max(0.0, x0 - pad)));
    const auto lo_y = static_cast<long>(std::floor(std::max(0.0, y0 - pad)));
    const auto hi_x = static_cast<long>(std::ceil(std::min(Sd, x1 + pad)));
    const auto hi_y = static_cast<long>(std::ceil(std::min(Sd, y1 + pad)));
    const Color col = part_color(layout.part[ids[0]]);
    for (long y = lo_y; y < hi_y; ++y)
      for (long x = lo_x; x < hi_x; ++x) {
        double d = 1e300;
        for (const auto& [a, b] : segs) d = std::min(d, segment_distance(x + 0.5, y + 0.5, a, b));
        const double alpha = 0.9 * std::exp(-d * d / (2.0 * sigma * sigma));
        if (alpha > 1e-4) blend(img, S, static_cast<std::size_t>(x), static_cast<std::size_t>(y), col, alpha);
      }
    // Pupils sit at eye-ring centroids.
    if (layout.part[ids[0]] == FacePart::Eye) {
      Point c{};
      for (std::size_t id : ids) {
        c.x += pts[id].x / static_cast<double>(ids.size());
        c.y += pts[id].y / static_cast<double>(ids.size());
      }
      const double r = std::max(sigma, 0.25 * (x1 - x0));
      for (long y = lo_y; y < hi_y; ++y)
        for (long x = lo_x; x < hi_x; ++x) {
          const double dx = x + 0.5 - c.x, dy = y + 0.5 - c.y;
          const double alpha = 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * r * r));
          if (alpha > 1e-4) blend(img, S, static_cast<std::size_t>(x), static_cast<std::size_t>(y), {0.05, 0.05, 0.08}, alpha);
        }
    }
  }

  // Landmark dots.
  const double dot = 0.5 * sigma;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Color c = part_color(layout.part[i]);
    const Color dark = {c[0] * 0.5, c[1] * 0.5, c[2] * 0.5};
    const auto lx = static_cast<long>(std::floor(pts[i].x - 2)), ly = static_cast<long>(std::floor(pts[i].y - 2));
    for (long y = std::max(0L, ly); y < std::min<long>(static_cast<long>(S), ly + 5); ++y)
      for (long x = std::max(0L, lx); x < std::min<long>(static_cast<long>(S), lx + 5); ++x) {
        const double dx = x + 0.5 - pts[i].x, dy = y + 0.5 - pts[i].y;
        const double alpha = 0.6 * std::exp(-(dx * dx + dy * dy) / (2.0 * dot * dot));
        blend(img, S, static_cast<std::size_t>(x), static_cast<std::size_t>(y), dark, alpha);
      }
  }

  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

}  // namespace

void apply_occlusion(LandmarkSample& sample, double x0, double y0, double side, Rng& rng) {
  const std::size_t S = sample.image_size();
  if (S > 0) {
    for (std::size_t y = 0; y < S; ++y) {
      const double cy = y + 0.5;
      if (cy < y0 || cy >= y0 + side) continue;
      for (std::size_t x = 0; x < S; ++x) {
        const double cx = x + 0.5;
        if (cx < x0 || cx >= x0 + side) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) sample.image[(ch * S + y) * S + x] = rng.uniform();
      }
    }
  }
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const Point& p = sample.landmarks[i];
    if (p.x >= x0 && p.x < x0 + side && p.y >= y0 && p.y < y0 + side) sample.visibility[i] = false;
  }
}

LandmarkSample synth_sample(const SynthConfig& cfg, const FaceLayout& layout, std::size_t index) {
  Rng rng = Rng::derive(cfg.seed, index);
  const std::size_t n = cfg.n_landmarks;
  const double S = static_cast<double>(cfg.image_size);

  std::vector<Point> shape = layout.base;
  for (std::size_t m = 0; m < cfg.deformation_modes; ++m) {
    const double coef = rng.normal() * kModeSpread[m] * cfg.deformation_amplitude;
    for (std::size_t i = 0; i < n; ++i) {
      const Point d = mode_field(m, layout.base[i], layout.part[i]);
      shape[i].x += coef * d.x;
      shape[i].y += coef * d.y;
    }
  }

  const double face = S * rng.uniform(cfg.face_scale_min, cfg.face_scale_max);
  const double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * kPi / 180.0;
  const double cx = S / 2 + rng.uniform(-cfg.max_offset_fraction, cfg.max_offset_fraction) * S;
  const double cy = S / 2 + rng.uniform(-cfg.max_offset_fraction, cfg.max_offset_fraction) * S;
  const double ca = std::cos(angle), sa = std::sin(angle);

  LandmarkSample s;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%06zu", index);
  s.id = id;
  s.landmarks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = (shape[i].x - 0.5) * face, uy = (shape[i].y - 0.5) * face;
    s.landmarks[i] = {cx + ca * ux - sa * uy + cfg.noise_sigma * rng.normal(),
                      cy + sa * ux + ca * uy + cfg.noise_sigma * rng.normal()};
  }
  const double half = 0.5 * face * (std::fabs(ca) + std::fabs(sa));
  s.bbox = {cx - half, cy - half, cx + half, cy + half};
  s.visibility.assign(n, true);
  s.in_frame.assign(n, true);
  s.image = render_face(layout, s.landmarks, cfg.image_size, rng);

  if (rng.bernoulli(cfg.occlusion_prob)) {
    const double side = cfg.occlusion_fraction * S;
    const double x0 = rng.uniform(0.0, S - side), y0 = rng.uniform(0.0, S - side);
    apply_occlusion(s, x0, y0, side, rng);
  }
  return s;
}

std::vector<LandmarkSample> synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  const FaceLayout layout = make_face_layout(cfg.n_landmarks);
  std::vector<LandmarkSample> out;
  out.reserve(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) out.push_back(synth_sample(cfg, layout, i));
  return out;
}

}  // namespace scca::data
