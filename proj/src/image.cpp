#include "raffnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#ifdef RAFFNET_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#endif

namespace raffnet {
namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P6" && magic != "P3") throw DataError("not a PPM file: " + path.string());
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(next_token(in));
    h = std::stol(next_token(in));
    maxval = std::stol(next_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed PPM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError("malformed PPM header: " + path.string());

  Image img(h, w);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P6") {
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(static_cast<size_t>(w * h * 3 * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw DataError("truncated PPM data: " + path.string());
    size_t k = 0;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          unsigned v = buf[k++];
          if (bytes == 2) v = (v << 8) | buf[k++];
          img(c, y, x) = v * scale;
        }
  } else {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const std::string tok = next_token(in);
          if (tok.empty()) throw DataError("truncated PPM data: " + path.string());
          img(c, y, x) = std::stol(tok) * scale;
        }
  }
  return img;
}

}  // namespace

bool image_codecs_available() {
#ifdef RAFFNET_HAVE_OPENCV
  return true;
#else
  return false;
#endif
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("image not found: " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
#ifdef RAFFNET_HAVE_OPENCV
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (m.empty()) throw DataError("cannot decode image: " + path.string());
  const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f;
  m.convertTo(f, CV_64FC3, scale);
  Image img(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3d>(y);
    for (int x = 0; x < f.cols; ++x) {
      // OpenCV stores BGR.
      img(0, y, x) = row[x][2];
      img(1, y, x) = row[x][1];
      img(2, y, x) = row[x][0];
    }
  }
  return img;
#else
  throw DataError("unsupported image format (built without OpenCV): " + path.string());
#endif
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path.string());
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<unsigned char> buf;
  buf.reserve(static_cast<size_t>(img.width() * img.height() * 3));
  for (Index y = 0; y < img.height(); ++y)
    for (Index x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img(c, y, x), 0.0, 1.0);
        buf.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace raffnet
