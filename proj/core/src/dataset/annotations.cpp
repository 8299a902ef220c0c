#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "scca/dataset.hpp"

namespace scca::data {
namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  if (sep == ' ') {
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  }
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_field(const std::string& tok, std::size_t line_no, std::size_t field) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw std::runtime_error("line " + std::to_string(line_no) + ", field " + std::to_string(field) +
                             ": cannot parse '" + tok + "' as a number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

LandmarkSample make_sample(std::string id, const std::vector<double>& values, std::size_t n, bool has_bbox) {
  LandmarkSample s;
  s.id = std::move(id);
  s.landmarks.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.landmarks[i] = {values[2 * i], values[2 * i + 1]};
  if (has_bbox) {
    s.bbox = {values[2 * n], values[2 * n + 1], values[2 * n + 2], values[2 * n + 3]};
  } else {
    s.bbox = landmark_extent(s.landmarks);
  }
  s.visibility.assign(n, true);
  s.in_frame.assign(n, true);
  return s;
}

}  // namespace

BBox landmark_extent(const std::vector<Point>& landmarks, double margin) {
  if (landmarks.empty()) throw std::invalid_argument("landmark_extent: no landmarks");
  BBox b{landmarks[0].x, landmarks[0].y, landmarks[0].x, landmarks[0].y};
  for (const Point& p : landmarks) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  const double mx = margin * b.width(), my = margin * b.height();
  return {b.x_min - mx, b.y_min - my, b.x_max + mx, b.y_max + my};
}

AnnotationFormat parse_annotation_format(const std::string& s) {
  if (s == "lines") return AnnotationFormat::Lines;
  if (s == "csv") return AnnotationFormat::Csv;
  throw std::invalid_argument("unknown annotation format '" + s + "' (expected lines or csv)");
}

std::vector<LandmarkSample> load_annotations(const std::filesystem::path& path, AnnotationFormat format,
                                             std::size_t n_landmarks) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file " + path.string());

  std::vector<LandmarkSample> samples;
  std::string line;
  std::size_t line_no = 0;
  std::size_t n = n_landmarks;

  if (format == AnnotationFormat::Csv) {
    bool has_header = false;
    bool has_bbox = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      auto fields = split(line, ',');
      if (!has_header) {
        if (fields.empty() || fields[0] != "id") {
          throw std::runtime_error("line " + std::to_string(line_no) + ", field 1: CSV header must start with 'id'");
        }
        const std::size_t coords = fields.size() - 1;
        has_bbox = fields.size() >= 5 && fields[fields.size() - 4] == "xmin";
        const std::size_t header_n = (coords - (has_bbox ? 4 : 0)) / 2;
        if ((coords - (has_bbox ? 4 : 0)) % 2 != 0 || header_n == 0) {
          throw std::runtime_error("line " + std::to_string(line_no) + ": CSV header has an odd coordinate count");
        }
        if (n != 0 && header_n != n) {
          throw std::runtime_error("inconsistent landmark count: header declares " + std::to_string(header_n) +
                                   ", expected " + std::to_string(n));
        }
        n = header_n;
        has_header = true;
        continue;
      }
      const std::size_t expected = 1 + 2 * n + (has_bbox ? 4 : 0);
      if (fields.size() != expected) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": inconsistent landmark count (" +
                                 std::to_string(fields.size()) + " fields, expected " + std::to_string(expected) +
                                 ")");
      }
      std::vector<double> values;
      for (std::size_t f = 1; f < fields.size(); ++f) values.push_back(parse_field(fields[f], line_no, f + 1));
      samples.push_back(make_sample(fields[0], values, n, has_bbox));
    }
  } else {
    while (std::getline(in, line)) {
      ++line_no;
      auto tokens = split(line, ' ');
      if (tokens.empty()) continue;
      const std::size_t numeric = tokens.size() - 1;
      if (n == 0) {
        if (numeric == 0 || numeric % 2 != 0) {
          throw std::runtime_error("line " + std::to_string(line_no) + ": odd number of coordinate fields");
        }
        n = numeric / 2;
      }
      bool has_bbox = false;
      if (numeric == 2 * n + 4) {
        has_bbox = true;
      } else if (numeric != 2 * n) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": inconsistent landmark count (" +
                                 std::to_string(numeric) + " coordinate fields, expected " + std::to_string(2 * n) +
                                 " or " + std::to_string(2 * n + 4) + ")");
      }
      std::vector<double> values;
      for (std::size_t f = 1; f < tokens.size(); ++f) values.push_back(parse_field(tokens[f], line_no, f + 1));
      samples.push_back(make_sample(tokens[0], values, n, has_bbox));
    }
  }
  if (samples.empty()) throw std::runtime_error("no records in " + path.string());
  return samples;
}

void write_annotations(const std::filesystem::path& path, const std::vector<LandmarkSample>& samples,
                       AnnotationFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (samples.empty()) throw std::invalid_argument("write_annotations: no samples");
  const std::size_t n = samples.front().size();
  if (format == AnnotationFormat::Csv) {
    out << "id";
    for (std::size_t i = 1; i <= n; ++i) out << ",x" << i << ",y" << i;
    out << ",xmin,ymin,xmax,ymax\n";
  }
  const char sep = format == AnnotationFormat::Csv ? ',' : ' ';
  for (const LandmarkSample& s : samples) {
    if (s.size() != n) throw std::invalid_argument("write_annotations: samples have different landmark counts");
    out << (s.id.empty() ? std::string("SYNTH") : s.id);
    for (const Point& p : s.landmarks) out << sep << format_double(p.x) << sep << format_double(p.y);
    out << sep << format_double(s.bbox.x_min) << sep << format_double(s.bbox.y_min) << sep
        << format_double(s.bbox.x_max) << sep << format_double(s.bbox.y_max) << '\n';
  }
}

void validate_mirror_table(const std::vector<std::size_t>& mirror, std::size_t n) {
  if (mirror.size() != n) {
    throw std::invalid_argument("mirror table has " + std::to_string(mirror.size()) + " entries, expected " +
                                std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (mirror[i] >= n || mirror[mirror[i]] != i) {
      throw std::invalid_argument("mirror table is not an involution at index " + std::to_string(i));
    }
  }
}

std::vector<std::size_t> load_mirror_table(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mirror table " + path.string());
  std::vector<std::size_t> mirror(n);
  for (std::size_t i = 0; i < n; ++i) mirror[i] = i;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = split(line, ' ');
    if (tok.empty()) continue;
    if (tok.size() != 2) throw std::runtime_error("mirror table line " + std::to_string(line_no) + ": expected 'i j'");
    const double a = parse_field(tok[0], line_no, 1), b = parse_field(tok[1], line_no, 2);
    if (a < 0 || b < 0 || a >= static_cast<double>(n) || b >= static_cast<double>(n) || a != static_cast<std::size_t>(a) ||
        b != static_cast<std::size_t>(b)) {
      throw std::runtime_error("mirror table line " + std::to_string(line_no) + ": index out of range");
    }
    mirror[static_cast<std::size_t>(a)] = static_cast<std::size_t>(b);
    mirror[static_cast<std::size_t>(b)] = static_cast<std::size_t>(a);
  }
  validate_mirror_table(mirror, n);
  return mirror;
}

void write_mirror_table(const std::filesystem::path& path, const std::vector<std::size_t>& mirror) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < mirror.size(); ++i)
    if (i <= mirror[i]) out << i << ' ' << mirror[i] << '\n';
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::vector<LandmarkSample> records = corpus.samples;
  for (LandmarkSample& s : records) {
    if (!s.image.empty()) {
      const std::string rel = "images/" + s.id + ".ppm";
      write_ppm(dir / rel, s.image);
      s.id = rel;
    }
  }
  write_annotations(dir / "annotations.txt", records, AnnotationFormat::Lines);
  std::ofstream(dir / "landmarks.txt") << (corpus.samples.empty() ? 0 : corpus.samples.front().size()) << '\n';
  write_mirror_table(dir / "mirror.txt", corpus.mirror);
  std::ofstream eyes(dir / "eyes.txt");
  eyes << corpus.eye_indices.first << ' ' << corpus.eye_indices.second << '\n';
  std::ofstream vis(dir / "visibility.txt");
  for (const LandmarkSample& s : corpus.samples) {
    for (std::size_t i = 0; i < s.visibility.size(); ++i) vis << (i ? " " : "") << (s.visibility[i] ? 1 : 0);
    vis << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Corpus c;
  std::size_t declared = 0;
  if (std::ifstream count(dir / "landmarks.txt"); count && !(count >> declared)) {
    throw std::runtime_error("corpus " + dir.string() + ": landmarks.txt must hold the landmark count");
  }
  c.samples = load_annotations(dir / "annotations.txt", AnnotationFormat::Lines, declared);
  if (c.samples.empty()) throw std::runtime_error("corpus " + dir.string() + " has no samples");
  const std::size_t n = c.samples.front().size();
  c.mirror = fs::exists(dir / "mirror.txt") ? load_mirror_table(dir / "mirror.txt", n) : std::vector<std::size_t>{};
  {
    std::ifstream eyes(dir / "eyes.txt");
    if (!eyes || !(eyes >> c.eye_indices.first >> c.eye_indices.second)) {
      throw std::runtime_error("corpus " + dir.string() + " is missing eyes.txt");
    }
    if (c.eye_indices.first >= n || c.eye_indices.second >= n || c.eye_indices.first == c.eye_indices.second) {
      throw std::runtime_error("eyes.txt: invalid eye landmark indices");
    }
  }
  std::ifstream vis(dir / "visibility.txt");
  for (LandmarkSample& s : c.samples) {
    if (vis) {
      for (std::size_t i = 0; i < n; ++i) {
        int v = 1;
        if (vis >> v) s.visibility[i] = v != 0;
      }
    }
    if (s.id != "SYNTH") {
      s.image = read_ppm(dir / s.id);
      s.id = fs::path(s.id).stem().string();
    }
  }
  return c;
}

}  // namespace scca::data
