#include "fdepth/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "fdepth/ops.hpp"
#include "fdepth/synth.hpp"

namespace fdepth {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

struct Header {
  char kind = 0;  // '5' or '6'
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t maxval = 0;
  std::size_t payload_offset = 0;
};

Header parse_header(const fs::path& path, const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    fail(path, "not a binary PGM/PPM file (expected P5 or P6 magic)");
  }
  Header h;
  h.kind = bytes[1];
  std::size_t pos = 2;
  std::int64_t fields[3] = {0, 0, 0};
  for (std::int64_t& field : fields) {
    // Whitespace and '#' comments may separate header fields.
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start) fail(path, "malformed header");
    if (pos - start > 9) fail(path, "header value too large");
    field = std::stoll(bytes.substr(start, pos - start));
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail(path, "malformed header (missing separator before payload)");
  }
  h.width = fields[0];
  h.height = fields[1];
  h.maxval = fields[2];
  h.payload_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) fail(path, "image extents must be positive");
  if (h.maxval <= 0 || h.maxval > 65535) fail(path, "maxval out of range");
  if (h.kind == '6' && h.maxval > 255) fail(path, "only 8-bit PPM is supported");
  if (h.kind == '5' && h.maxval < 256) fail(path, "only 16-bit PGM is supported");
  return h;
}

std::uint16_t quantize(double v, double scale, double top) {
  return static_cast<std::uint16_t>(std::clamp(std::round(v * scale), 0.0, top));
}

}  // namespace

std::string ppm_header(std::int64_t width, std::int64_t height) {
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

void write_image(const fs::path& path, const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) {
    throw std::invalid_argument("write_image: expected a (1,3,H,W) or (1,1,H,W) tensor, got " + s.str());
  }
  const auto v = image.values();
  const auto plane = static_cast<std::size_t>(s.h * s.w);
  std::string out;
  if (s.c == 3) {
    out = ppm_header(s.w, s.h);
    out.reserve(out.size() + 3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize(v[c * plane + p], 255.0, 255.0)));
    }
  } else {
    out = "P5\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n65535\n";
    out.reserve(out.size() + 2 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint16_t q = quantize(v[p], kDisparityScale, 65535.0);
      out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xff));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

Tensor read_image(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const Header h = parse_header(path, bytes);
  const auto plane = static_cast<std::size_t>(h.width * h.height);
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  const std::size_t bytes_per = h.maxval > 255 ? 2 : 1;
  const std::size_t need = plane * channels * bytes_per;
  if (bytes.size() - h.payload_offset < need) {
    fail(path, "truncated payload: expected " + std::to_string(need) + " bytes, found " +
                   std::to_string(bytes.size() - h.payload_offset));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.payload_offset);
  std::vector<double> out(plane * channels);
  if (channels == 3) {
    const double maxval = static_cast<double>(h.maxval);
    for (std::size_t k = 0; k < plane; ++k) {
      for (std::size_t c = 0; c < 3; ++c) out[c * plane + k] = static_cast<double>(p[3 * k + c]) / maxval;
    }
  } else {
    for (std::size_t k = 0; k < plane; ++k) {
      out[k] = static_cast<double>((p[2 * k] << 8) | p[2 * k + 1]) / kDisparityScale;
    }
  }
  return Tensor::from_values({1, static_cast<std::int64_t>(channels), h.height, h.width}, std::move(out));
}

std::string sample_stem(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(index));
  return buf;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ofstream f(dir / "manifest.txt");
  if (!f) throw std::runtime_error((dir / "manifest.txt").string() + ": cannot open for writing");
  f.precision(17);
  f << "baseline=" << m.baseline << "\n" << "focal=" << m.focal << "\n";
  for (std::int64_t i : m.indices) f << sample_stem(i) << "\n";
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.txt";
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": missing dataset manifest");
  Manifest m;
  bool have_b = false, have_f = false;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      if (line.rfind("baseline=", 0) == 0) {
        m.baseline = std::stod(line.substr(9));
        have_b = true;
      } else if (line.rfind("focal=", 0) == 0) {
        m.focal = std::stod(line.substr(6));
        have_f = true;
      } else {
        std::size_t used = 0;
        m.indices.push_back(std::stoll(line, &used));
        if (used != line.size()) throw std::invalid_argument(line);
      }
    } catch (const std::logic_error&) {
      fail(path, "line " + std::to_string(lineno) + ": cannot parse '" + line + "'");
    }
  }
  if (!have_b || !have_f) fail(path, "manifest lacks baseline= or focal=");
  return m;
}

void write_sample(const fs::path& dir, std::int64_t index, const StereoSample& s) {
  s.validate();
  const std::string stem = sample_stem(index);
  write_image(dir / (stem + "_left.ppm"), s.left);
  write_image(dir / (stem + "_right.ppm"), s.right);
  if (s.gt_disparity) {
    Tensor disp = *s.gt_disparity;
    if (s.visible) disp = mul(disp, *s.visible);
    write_image(dir / (stem + "_disp.pgm"), disp);
  }
}

std::vector<StereoSample> load_dataset(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  std::vector<StereoSample> out;
  out.reserve(m.indices.size());
  for (std::int64_t index : m.indices) {
    const std::string stem = sample_stem(index);
    StereoSample s;
    s.left = read_image(dir / (stem + "_left.ppm"));
    s.right = read_image(dir / (stem + "_right.ppm"));
    s.baseline = m.baseline;
    s.focal = m.focal;
    const fs::path disp_path = dir / (stem + "_disp.pgm");
    if (fs::exists(disp_path)) {
      Tensor disp = read_image(disp_path);
      std::vector<double> mask(disp.values().size());
      std::transform(disp.values().begin(), disp.values().end(), mask.begin(),
                     [](double d) { return d > 0.0 ? 1.0 : 0.0; });
      s.visible = Tensor::from_values(disp.shape(), std::move(mask));
      s.gt_disparity = std::move(disp);
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

Manifest generate_dataset(const fs::path& dir, std::int64_t count, std::uint64_t seed, std::int64_t width,
                          std::int64_t height) {
  if (count < 0) throw std::invalid_argument("sample count must be non-negative");
  fs::create_directories(dir);
  Manifest m;
  for (std::int64_t i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i);
    const SceneSpec spec = random_scene(scene_seed, height, width, i % 2 == 1);
    m.baseline = spec.baseline;
    m.focal = spec.focal;
    write_sample(dir, i, render_stereo(spec));
    m.indices.push_back(i);
  }
  write_manifest(dir, m);
  return m;
}

}  // namespace fdepth
