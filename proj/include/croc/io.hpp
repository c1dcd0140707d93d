#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace croc {

// FNV-1a 64-bit running digest.
struct Fnv1a {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* data, std::size_t len);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void str(const std::string& s);
  std::uint64_t value() const { return h; }
};

std::uint64_t fnv1a64(const std::string& s);

/// Shortest round-trippable decimal for a double (%.17g style, but trimmed by
/// precision probing). Used for every CSV so reruns are byte-identical.
std::string format_double(double v);

/// Write via a temp file in the same directory, then rename into place.
void atomic_write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Little-endian binary encode/decode into a byte buffer.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
std::uint32_t get_u32(const std::string& in, std::size_t& pos);
std::uint64_t get_u64(const std::string& in, std::size_t& pos);
double get_f64(const std::string& in, std::size_t& pos);

/// Heatmap SVG: cells colored on a diverging-free sequential ramp, row/col
/// labels optional, values normalized to [min, max] of the matrix.
std::string svg_heatmap(const std::vector<double>& values, std::size_t rows,
                        std::size_t cols, const std::vector<std::string>& labels,
                        const std::string& title);

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Simple multi-series line plot with axes and a legend.
std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& x_label,
                          const std::string& y_label, const std::string& title,
                          bool log_x = false);

}  // namespace croc
