#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scca/dataset.hpp"

namespace scca::data {
namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

nk::Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error(path.string() + ": only binary PPM (P6) images are supported");
  std::size_t w = 0, h = 0, maxval = 0;
  skip_ws_and_comments(in);
  in >> w;
  skip_ws_and_comments(in);
  in >> h;
  skip_ws_and_comments(in);
  in >> maxval;
  in.get();
  if (!in || w == 0 || h == 0 || maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": bad PPM header");
  std::vector<unsigned char> buf(w * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated PPM data");
  nk::Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * h + y) * w + x] = static_cast<double>(buf[(y * w + x) * 3 + c]) / static_cast<double>(maxval);
  return img;
}

void write_ppm(const std::filesystem::path& path, const nk::Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_ppm: expected a [3, H, W] image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = std::clamp(image[(c * h + y) * w + x], 0.0, 1.0);
        buf[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace scca::data
