#include "hpgan/io.hpp"

#include "hpgan/augment.hpp"
#include "hpgan/rng.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace hpgan::io {

namespace fs = std::filesystem;

namespace {

Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("cannot decode image '" + path + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.rgb.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("cannot decode image '" + path + "': " + msg);
  }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open image '" + path + "'");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("cannot decode image '" + path + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path + "'");
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  if (in.gcount() >= 8 && png_sig_cmp(sig.data(), 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw std::runtime_error("cannot decode image '" + path + "': not a PNG or JPEG file");
}

void write_png(const std::string& path, const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) * 3) {
    throw std::invalid_argument("write_png: malformed image");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write '" + path + "': " + png.message);
  }
}

Tensor<float> to_tensor(const Image& image, Index size) {
  if (size <= 0) throw std::invalid_argument("to_tensor: size must be positive");
  Tensor<float> out({3, size, size});
  const double sx = static_cast<double>(image.width) / static_cast<double>(size);
  const double sy = static_cast<double>(image.height) / static_cast<double>(size);
  auto px = [&](int x, int y, int c) {
    return static_cast<double>(image.rgb[(static_cast<std::size_t>(y) * image.width + x) * 3 + c]);
  };
  for (Index oy = 0; oy < size; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (Index ox = 0; ox < size; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * px(x0, y0, c) + wx * px(x1, y0, c)) +
                         wy * ((1 - wx) * px(x0, y1, c) + wx * px(x1, y1, c));
        out.data[(c * size + oy) * size + ox] = static_cast<float>(v / 255.0 * 2.0 - 1.0);
      }
    }
  }
  return out;
}

std::uint8_t to_byte(double v) {
  const double x = std::floor((v + 1.0) / 2.0 * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
}

template <typename Scalar>
Image make_grid(const Tensor<Scalar>& images) {
  if (images.rank() != 4 || images.dim(1) != 3) throw std::invalid_argument("make_grid expects [N, 3, H, W]");
  const Index n = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (n <= 0) throw std::invalid_argument("make_grid needs at least one image");
  const auto cols = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
  const Index rows = (n + cols - 1) / cols;
  Image out;
  out.width = static_cast<int>(cols * w);
  out.height = static_cast<int>(rows * h);
  out.rgb.assign(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * 3, 0);
  for (Index i = 0; i < n; ++i) {
    const Index gy = i / cols, gx = i % cols;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        for (Index c = 0; c < 3; ++c) {
          const auto idx = (static_cast<std::size_t>(gy * h + y) * out.width + static_cast<std::size_t>(gx * w + x)) * 3;
          out.rgb[idx + static_cast<std::size_t>(c)] = to_byte(static_cast<double>(images.at(i, c, y, x)));
        }
  }
  return out;
}

template Image make_grid(const Tensor<float>&);
template Image make_grid(const Tensor<double>&);

Dataset load_dataset(const std::string& path, Index resolution, Index subset, std::uint64_t seed, bool xflip) {
  if (!fs::is_directory(path)) throw std::invalid_argument("dataset path '" + path + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("dataset directory '" + path + "' has no PNG/JPEG files");
  if (subset < 0) throw std::invalid_argument("subset must be >= 0");
  if (subset > static_cast<Index>(files.size())) {
    throw std::invalid_argument("subset " + std::to_string(subset) + " exceeds dataset size " +
                                std::to_string(files.size()));
  }
  if (subset > 0) {
    std::vector<std::size_t> idx(files.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    RngStream rng = RngStream(seed).derive("subset");
    for (std::size_t i = 0; i < static_cast<std::size_t>(subset); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(subset));
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> kept;
    for (std::size_t i : idx) kept.push_back(files[i]);
    files = std::move(kept);
  }
  Dataset ds;
  ds.files = files;
  const Index per = 3 * resolution * resolution;
  Tensor<float> images({static_cast<Index>(files.size()), 3, resolution, resolution});
  for (std::size_t i = 0; i < files.size(); ++i) {
    images.data.segment(static_cast<Index>(i) * per, per) = to_tensor(read_image(files[i]), resolution).data;
  }
  ds.images = xflip ? augment::xflip_amplify(images) : std::move(images);
  return ds;
}

std::vector<std::string> make_synth(const std::string& dir, Index count, Index resolution, std::uint64_t seed) {
  if (count <= 0 || resolution <= 0) throw std::invalid_argument("make_synth needs positive count and resolution");
  fs::create_directories(dir);
  static constexpr std::array<std::array<double, 3>, 2> kModes{{{220, 70, 50}, {50, 110, 220}}};
  RngStream rng = RngStream(seed).derive("synth");
  std::vector<std::string> written;
  const double r = static_cast<double>(resolution);
  for (Index i = 0; i < count; ++i) {
    const auto& mode = kModes[static_cast<std::size_t>(rng.below(2))];
    std::array<double, 3> color{};
    for (int c = 0; c < 3; ++c) color[static_cast<std::size_t>(c)] = std::clamp(mode[static_cast<std::size_t>(c)] + 15 * rng.normal(), 0.0, 255.0);
    const double cx = rng.uniform(0.3 * r, 0.7 * r), cy = rng.uniform(0.3 * r, 0.7 * r);
    const double sigma = rng.uniform(0.1 * r, 0.2 * r);
    const double bg = 25;
    Image img;
    img.width = img.height = static_cast<int>(resolution);
    img.rgb.resize(static_cast<std::size_t>(resolution * resolution * 3));
    for (Index y = 0; y < resolution; ++y)
      for (Index x = 0; x < resolution; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double a = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        for (int c = 0; c < 3; ++c) {
          const double v = bg + (color[static_cast<std::size_t>(c)] - bg) * a;
          img.rgb[static_cast<std::size_t>((y * resolution + x) * 3 + c)] =
              static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
        }
      }
    char name[32];
    std::snprintf(name, sizeof name, "blob_%04lld.png", static_cast<long long>(i));
    const std::string path = (fs::path(dir) / name).string();
    write_png(path, img);
    written.push_back(path);
  }
  return written;
}

}  // namespace hpgan::io
