#include "croc/io.hpp"

#include "croc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace croc {

void Fnv1a::bytes(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

void Fnv1a::u64(std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(buf, 8);
}

void Fnv1a::str(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}

std::uint64_t fnv1a64(const std::string& s) {
  Fnv1a f;
  f.bytes(s.data(), s.size());
  return f.value();
}

std::string format_double(double v) {
  // Shortest representation that still round-trips exactly.
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error("binary decode: truncated input");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw Error("binary decode: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

double get_f64(const std::string& in, std::size_t& pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

namespace {

std::string color_ramp(double t) {
  // Dark blue through teal to light yellow.
  t = std::clamp(t, 0.0, 1.0);
  const double r = 20.0 + t * (250.0 - 20.0) * t;
  const double g = 30.0 + t * 190.0;
  const double b = 90.0 + (1.0 - t) * 80.0 + t * t * 60.0;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r),
                static_cast<int>(g), static_cast<int>(std::min(b, 255.0)));
  return buf;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

std::string svg_heatmap(const std::vector<double>& values, std::size_t rows,
                        std::size_t cols, const std::vector<std::string>& labels,
                        const std::string& title) {
  if (values.size() != rows * cols) throw Error("svg_heatmap: size mismatch");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const double cell = std::max(14.0, 360.0 / static_cast<double>(std::max(rows, cols)));
  const double mleft = 70.0, mtop = 50.0;
  const double w = mleft + cell * static_cast<double>(cols) + 30.0;
  const double h = mtop + cell * static_cast<double>(rows) + 50.0;
  const bool annotate = cell >= 28.0;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">" << title << "</text>\n";
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = values[i * cols + j];
      const double x = mleft + cell * static_cast<double>(j);
      const double y = mtop + cell * static_cast<double>(i);
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
        << cell << "\" fill=\"" << color_ramp((v - lo) / span) << "\"/>\n";
      if (annotate) {
        s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" "
             "fill=\"#333\">" << fmt2(v) << "</text>\n";
      }
    }
  }
  if (labels.size() == rows && labels.size() == cols) {
    for (std::size_t i = 0; i < rows; ++i) {
      s << "<text x=\"" << mleft - 6 << "\" y=\"" << mtop + cell * (static_cast<double>(i) + 0.5) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << labels[i]
        << "</text>\n";
      s << "<text x=\"" << mleft + cell * (static_cast<double>(i) + 0.5) << "\" y=\""
        << mtop - 8 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << labels[i] << "</text>\n";
    }
  }
  s << "<text x=\"" << mleft << "\" y=\"" << h - 16
    << "\" font-family=\"sans-serif\" font-size=\"11\">min " << fmt2(lo) << ", max "
    << fmt2(hi) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& x_label,
                          const std::string& y_label, const std::string& title,
                          bool log_x) {
  const double w = 560.0, h = 380.0;
  const double ml = 70.0, mr = 140.0, mt = 50.0, mb = 60.0;
  const double pw = w - ml - mr, ph = h - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& ser : series) {
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      double xv = ser.x[i];
      if (log_x) xv = std::log10(std::max(xv, 1e-300));
      if (first) {
        xmin = xmax = xv;
        ymin = ymax = ser.y[i];
        first = false;
      } else {
        xmin = std::min(xmin, xv);
        xmax = std::max(xmax, xv);
        ymin = std::min(ymin, ser.y[i]);
        ymax = std::max(ymax, ser.y[i]);
      }
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double ypad = (ymax - ymin) * 0.08;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double xv) {
    if (log_x) xv = std::log10(std::max(xv, 1e-300));
    return ml + (xv - xmin) / (xmax - xmin) * pw;
  };
  auto py = [&](double yv) { return mt + (1.0 - (yv - ymin) / (ymax - ymin)) * ph; };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"26\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">" << title << "</text>\n";
  s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const double yy = py(fy);
    s << "<line x1=\"" << ml << "\" y1=\"" << yy << "\" x2=\"" << ml + pw << "\" y2=\"" << yy
      << "\" stroke=\"#eee\"/>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << yy + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt2(fy)
      << "</text>\n";
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double xx = ml + pw * i / 4.0;
    const double shown = log_x ? std::pow(10.0, fx) : fx;
    s << "<text x=\"" << xx << "\" y=\"" << mt + ph + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fmt2(shown)
      << "</text>\n";
  }
  s << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 14
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
    << "</text>\n";
  s << "<text x=\"18\" y=\"" << mt + ph / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 "
    << mt + ph / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    const char* color = kColors[k % 6];
    std::ostringstream pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      pts << (i ? " " : "") << px(ser.x[i]) << "," << py(ser.y[i]);
    }
    s << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      s << "<circle cx=\"" << px(ser.x[i]) << "\" cy=\"" << py(ser.y[i])
        << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = mt + 16.0 * static_cast<double>(k);
    s << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 30
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << ml + pw + 34 << "\" y=\"" << ly + 4
      << "\" font-family=\"sans-serif\" font-size=\"10\">" << ser.name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace croc
