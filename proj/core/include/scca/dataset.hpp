#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scca/numkit/tensor.hpp"
#include "scca/rng.hpp"

namespace scca::data {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

// Landmark extent grown by `margin` of its size on every side.
BBox landmark_extent(const std::vector<Point>& landmarks, double margin = 0.05);

// One face instance. Coordinates are continuous pixel units where pixel (i, j)
// covers [j, j+1) x [i, i+1). `image` is [3, S, S] in [0, 1], or empty for
// geometry-only records.
struct LandmarkSample {
  std::string id;
  nk::Tensor image;
  std::vector<Point> landmarks;
  BBox bbox;
  std::vector<bool> visibility;  // false: occluded
  std::vector<bool> in_frame;    // false: pushed outside [0, S] by augmentation
  double weight = 1.0;           // per-sample loss weight (data balancing hook)

  std::size_t size() const { return landmarks.size(); }
  std::size_t image_size() const { return image.empty() ? 0 : image.dim(2); }
};

// ---------------------------------------------------------------------------
// Annotation files

enum class AnnotationFormat { Lines, Csv };

AnnotationFormat parse_annotation_format(const std::string& s);

// Parses `lines` records `<path|SYNTH> x1 y1 ... xN yN [xmin ymin xmax ymax]`
// or CSV with header `id,x1,y1,...,xN,yN[,xmin,ymin,xmax,ymax]`. Images are not
// loaded. n_landmarks = 0 infers N from the first record (lines format:
// without bbox fields unless the count is ambiguous).
std::vector<LandmarkSample> load_annotations(const std::filesystem::path& path, AnnotationFormat format,
                                             std::size_t n_landmarks);

void write_annotations(const std::filesystem::path& path, const std::vector<LandmarkSample>& samples,
                       AnnotationFormat format);

// Mirror-pair table: one `i j` pair per line; unlisted indices map to
// themselves. The result is validated to be an involution on [0, n).
std::vector<std::size_t> load_mirror_table(const std::filesystem::path& path, std::size_t n);
void write_mirror_table(const std::filesystem::path& path, const std::vector<std::size_t>& mirror);
void validate_mirror_table(const std::vector<std::size_t>& mirror, std::size_t n);

// Binary PPM (P6) in/out; pixel values map to [0, 1].
nk::Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const nk::Tensor& image);

// ---------------------------------------------------------------------------
// Synthetic faces

enum class FacePart { Contour, Brow, NoseBridge, NoseBase, Eye, MouthOuter, MouthInner };

// Left-right symmetric base shape in a unit face box, scaled to N landmarks.
struct FaceLayout {
  std::vector<Point> base;
  std::vector<FacePart> part;
  std::vector<std::size_t> mirror;
  std::vector<std::vector<std::size_t>> strokes;  // polylines drawn when rendering
  std::vector<bool> stroke_closed;
  std::size_t left_eye_outer = 0;
  std::size_t right_eye_outer = 0;
};

// Throws for N < 10.
FaceLayout make_face_layout(std::size_t n_landmarks);

inline constexpr std::size_t kMaxDeformationModes = 9;

struct SynthConfig {
  std::size_t n_landmarks = 68;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t deformation_modes = kMaxDeformationModes;
  double deformation_amplitude = 1.0;  // multiplier on each mode's natural spread
  double noise_sigma = 0.3;            // per-landmark jitter, pixels
  double occlusion_prob = 0.0;
  double occlusion_fraction = 0.2;  // patch side as a fraction of S
  double face_scale_min = 0.55;     // face box side as a fraction of S
  double face_scale_max = 0.75;
  double max_rotation_deg = 10.0;
  double max_offset_fraction = 0.06;
  std::pair<std::size_t, std::size_t> eye_indices{0, 0};
  std::vector<std::size_t> mirror;
};

// Config for N landmarks with eye pair and mirror table taken from the layout.
SynthConfig default_synth_config(std::size_t n_landmarks);
void validate(const SynthConfig& cfg);

// Deterministic in cfg; sample i draws from the stream Rng::derive(seed, i).
std::vector<LandmarkSample> synth_generate(const SynthConfig& cfg);
LandmarkSample synth_sample(const SynthConfig& cfg, const FaceLayout& layout, std::size_t index);

// Fills an axis-aligned square patch with uniform noise and marks covered
// landmarks occluded.
void apply_occlusion(LandmarkSample& sample, double x0, double y0, double side, Rng& rng);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double max_rotation_deg = 40.0;
  double max_translation = 30.0;  // pixels at S = 256; scaled by S / 256
  double flip_prob = 0.5;
  double max_rescale = 0.1;
  double occlusion_prob = 0.5;
  double occlusion_fraction = 0.2;
};

// Concrete transform: p' = c + scale * R(angle) * (flip(p) - c) + shift.
struct AugmentParams {
  double angle_deg = 0.0;
  double tx = 0.0, ty = 0.0;
  double scale = 1.0;
  bool flip = false;
  bool occlude = false;
  double occ_x = 0.0, occ_y = 0.0, occ_side = 0.0;
  std::uint64_t occ_seed = 0;
  double frame_size = 0.0;  // frame side for geometry-only samples; 0 uses the image size

  bool is_identity() const { return angle_deg == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0 && !flip && !occlude; }
};

AugmentParams sample_augment(const AugmentConfig& cfg, std::size_t image_size, Rng& rng);

// Applies the same geometric transform to image (bilinear, edge-replicated)
// and landmarks; flip remaps indices through `mirror`. Landmarks leaving the
// frame are kept and flagged in `in_frame`.
LandmarkSample apply_augment(const LandmarkSample& sample, const AugmentParams& params,
                             const std::vector<std::size_t>& mirror);

LandmarkSample augment(const LandmarkSample& sample, const AugmentConfig& cfg, const std::vector<std::size_t>& mirror,
                       Rng& rng);

// ---------------------------------------------------------------------------
// Corpus-level landmark tensor

// T[M, N, 2]: coordinates normalised per sample by its bbox.
struct LandmarkTensor {
  nk::Tensor values;
  std::size_t samples() const { return values.dim(0); }
  std::size_t landmarks() const { return values.dim(1); }
};

LandmarkTensor to_landmark_tensor(const std::vector<LandmarkSample>& samples);
Point normalize_point(const Point& p, const BBox& box);
Point denormalize_point(const Point& p, const BBox& box);

// ---------------------------------------------------------------------------
// Corpus directories written by the `synth` command: annotations.txt,
// landmarks.txt (N), mirror.txt, eyes.txt, visibility.txt and images/<id>.ppm.

struct Corpus {
  std::vector<LandmarkSample> samples;
  std::vector<std::size_t> mirror;
  std::pair<std::size_t, std::size_t> eye_indices{0, 0};
};

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace scca::data
