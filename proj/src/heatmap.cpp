#include "gabvit/heatmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace gabvit {

std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

std::string format_raw_grid(const Eigen::MatrixXd& grid) {
  std::string out = "grid " + std::to_string(grid.rows()) + " " + std::to_string(grid.cols()) + "\n";
  char buf[40];
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%s%.17g", c ? " " : "", grid(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd parse_raw_grid(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string magic;
  long long h = 0, w = 0;
  if (!(in >> magic) || magic != "grid") throw FormatError(source + ": expected header 'grid h w'");
  if (!(in >> h >> w) || h <= 0 || w <= 0) throw FormatError(source + ": grid dimensions must be positive integers");
  Eigen::MatrixXd grid(h, w);
  for (Eigen::Index i = 0; i < h * w; ++i) {
    std::string token;
    if (!(in >> token)) {
      throw FormatError(source + ": expected " + std::to_string(h * w) + " values, found " + std::to_string(i));
    }
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size()) throw FormatError(source + ": bad value '" + token + "'");
    grid(i / w, i % w) = v;
  }
  if (std::string extra; in >> extra) throw FormatError(source + ": trailing data after " + std::to_string(h * w) + " values");
  return grid;
}

EncodedHeatmap encode_heatmap(const Eigen::MatrixXd& raw, const HeatmapInfo& info) {
  if (raw.size() == 0) throw FormatError("heatmap is empty");
  if (!raw.allFinite()) throw FormatError("heatmap contains non-finite values");
  EncodedHeatmap enc;
  enc.raw_min = raw.minCoeff();
  enc.raw_max = raw.maxCoeff();
  enc.constant = enc.raw_min == enc.raw_max;

  enc.pgm = "P5\n" + std::to_string(raw.cols()) + " " + std::to_string(raw.rows()) + "\n65535\n";
  const double span = enc.raw_max - enc.raw_min;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      const long v = enc.constant ? 0 : std::lround(65535.0 * (raw(r, c) - enc.raw_min) / span);
      const auto px = static_cast<unsigned>(std::clamp(v, 0L, 65535L));
      enc.pgm.push_back(static_cast<char>(px >> 8));
      enc.pgm.push_back(static_cast<char>(px & 0xffu));
    }
  }

  char buf[96];
  enc.meta = "format=pgm16\n";
  enc.meta += "width=" + std::to_string(raw.cols()) + "\nheight=" + std::to_string(raw.rows()) + "\n";
  std::snprintf(buf, sizeof buf, "raw_min=%.17g\nraw_max=%.17g\n", enc.raw_min, enc.raw_max);
  enc.meta += buf;
  enc.meta += std::string("constant=") + (enc.constant ? "true" : "false") + "\n";
  enc.meta += "target_patch=" + (info.target_patch ? std::to_string(*info.target_patch) : std::string("none")) + "\n";
  enc.meta += "sample_count=" + (info.sample_count ? std::to_string(*info.sample_count) : std::string("none")) + "\n";
  enc.grid = format_raw_grid(raw);
  return enc;
}

void write_heatmap(const std::string& path, const Eigen::MatrixXd& raw, const HeatmapInfo& info) {
  auto enc = encode_heatmap(raw, info);
  enc.meta += "raw_grid=" + std::filesystem::path(path + ".grid").filename().string() + "\n";
  write_binary_file(path, enc.pgm);
  write_binary_file(path + ".meta", enc.meta);
  write_binary_file(path + ".grid", enc.grid);
}

Graymap parse_pnm(const std::string& bytes, const std::string& source) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_uint = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw FormatError(source + ": bad " + std::string(what) + " in image header");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(source + ": not a binary P5/P6 image");
  }
  Graymap img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  img.width = read_uint("width");
  img.height = read_uint("height");
  img.maxval = static_cast<unsigned>(read_uint("maxval"));
  if (img.width == 0 || img.height == 0) throw FormatError(source + ": image dimensions must be positive");
  if (img.maxval == 0 || img.maxval > 65535) throw FormatError(source + ": maxval must be in [1, 65535]");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(source + ": missing whitespace after maxval");
  }
  ++pos;
  const std::size_t bytes_per = img.maxval > 255 ? 2 : 1;
  const std::size_t count = img.width * img.height * img.channels;
  if (bytes.size() - pos < count * bytes_per) {
    throw FormatError(source + ": pixel data truncated (" + std::to_string(bytes.size() - pos) + " of " +
                      std::to_string(count * bytes_per) + " bytes)");
  }
  img.samples.resize(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = static_cast<unsigned char>(bytes[pos + i * bytes_per]);
    if (bytes_per == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    img.samples[static_cast<Eigen::Index>(i)] = v;
  }
  return img;
}

namespace {

std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd load_grid(const std::string& path) {
  const auto bytes = read_binary_file(path);
  if (bytes.rfind("grid", 0) == 0) return parse_raw_grid(bytes, path);
  const auto img = parse_pnm(bytes, path);
  if (img.channels != 1) throw FormatError(path + ": heatmaps must be single-channel (P5)");
  Eigen::MatrixXd grid(static_cast<Eigen::Index>(img.height), static_cast<Eigen::Index>(img.width));
  for (Eigen::Index i = 0; i < grid.size(); ++i) grid(i / grid.cols(), i % grid.cols()) = img.samples[i];

  if (std::filesystem::exists(path + ".meta")) {
    const auto meta = parse_meta(read_binary_file(path + ".meta"));
    const auto lo = meta.find("raw_min"), hi = meta.find("raw_max");
    if (lo != meta.end() && hi != meta.end()) {
      const double a = std::strtod(lo->second.c_str(), nullptr), b = std::strtod(hi->second.c_str(), nullptr);
      grid = (grid.array() / static_cast<double>(img.maxval) * (b - a) + a).matrix();
      if (a == b) grid.setConstant(a);
    }
  }
  return grid;
}

Tensor load_image(const std::string& path) {
  const auto img = parse_pnm(read_binary_file(path), path);
  Tensor::Array data = (img.samples / static_cast<double>(img.maxval)).cast<float>();
  return Tensor({img.height, img.width, img.channels}, std::move(data));
}

}  // namespace gabvit
