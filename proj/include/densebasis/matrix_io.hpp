#pragma once

// Matrix files.
//   CSV : first line "rows,cols", then one line per row, comma separated.
//   DMAT: "DMAT", u16 version (1), u64 rows, u64 cols, rows*cols f64 values,
//         row-major, all little-endian.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "densebasis/matrix.hpp"

namespace densebasis {

enum class MatrixFormat { csv, dmat };

inline MatrixFormat parse_format(std::string_view tag) {
  if (tag == "csv") return MatrixFormat::csv;
  if (tag == "dmat") return MatrixFormat::dmat;
  throw InvalidInput("unknown matrix format '" + std::string(tag) + "' (expected csv or dmat)");
}

inline const char* format_name(MatrixFormat f) { return f == MatrixFormat::csv ? "csv" : "dmat"; }

/// Guesses the format from the extension; anything not ending in .csv is DMAT.
inline MatrixFormat format_from_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? MatrixFormat::csv : MatrixFormat::dmat;
}

namespace detail {

constexpr std::array<char, 4> kDmatMagic = {'D', 'M', 'A', 'T'};
constexpr std::uint16_t kDmatVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw FormatError(std::string("DMAT truncated while reading ") + what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

inline double parse_double(std::string_view token, std::size_t line) {
  while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.remove_prefix(1);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\t' || token.back() == '\r')) token.remove_suffix(1);
  if (token.empty()) throw FormatError("CSV line " + std::to_string(line) + ": empty field");
  // strtod accepts nan/inf spellings; finiteness is judged by the caller.
  std::string owned(token);
  char* end = nullptr;
  const double v = std::strtod(owned.c_str(), &end);
  if (end != owned.c_str() + owned.size())
    throw FormatError("CSV line " + std::to_string(line) + ": bad number '" + owned + "'");
  return v;
}

}  // namespace detail

/// Writes one DMAT blob (no trailing data).
inline void write_dmat(std::ostream& out, const Matrix& m) {
  out.write(detail::kDmatMagic.data(), 4);
  detail::put_le<std::uint16_t>(out, detail::kDmatVersion);
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

/// Reads one DMAT blob from the current stream position.
inline Matrix read_dmat(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != detail::kDmatMagic) throw FormatError("not a DMAT stream (bad magic)");
  const auto version = detail::get_le<std::uint16_t>(in, "version");
  if (version != detail::kDmatVersion) throw FormatError("unsupported DMAT version " + std::to_string(version));
  const auto rows = detail::get_le<std::uint64_t>(in, "rows");
  const auto cols = detail::get_le<std::uint64_t>(in, "cols");
  if (rows > (1ULL << 32) || cols > (1ULL << 32) || (cols != 0 && rows > (1ULL << 40) / cols))
    throw FormatError("DMAT dimensions are implausibly large");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = std::bit_cast<double>(detail::get_le<std::uint64_t>(in, "values"));
  return m;
}

inline void write_csv(std::ostream& out, const Matrix& m) {
  out << m.rows() << ',' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

inline Matrix read_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw FormatError("CSV is empty");
  const auto comma = line.find(',');
  if (comma == std::string::npos) throw FormatError("CSV header must be 'rows,cols'");
  long long rows = 0, cols = 0;
  {
    const std::string r = line.substr(0, comma), c = line.substr(comma + 1);
    auto rr = std::from_chars(r.data(), r.data() + r.size(), rows);
    std::string cc = c;
    while (!cc.empty() && (cc.back() == '\r' || cc.back() == ' ')) cc.pop_back();
    auto cr = std::from_chars(cc.data(), cc.data() + cc.size(), cols);
    if (rr.ec != std::errc() || rr.ptr != r.data() + r.size() || cr.ec != std::errc() ||
        cr.ptr != cc.data() + cc.size() || rows < 0 || cols < 0)
      throw FormatError("CSV header must be 'rows,cols', got '" + line + "'");
  }
  Matrix m(rows, cols);
  for (long long i = 0; i < rows; ++i) {
    ++lineno;
    if (!std::getline(in, line))
      throw FormatError("CSV truncated: expected " + std::to_string(rows) + " rows, got " + std::to_string(i));
    std::string_view rest(line);
    for (long long j = 0; j < cols; ++j) {
      const auto pos = rest.find(',');
      if ((pos == std::string_view::npos) != (j == cols - 1))
        throw FormatError("CSV line " + std::to_string(lineno) + ": expected " + std::to_string(cols) + " fields");
      m(i, j) = detail::parse_double(rest.substr(0, pos), lineno);
      if (pos != std::string_view::npos) rest.remove_prefix(pos + 1);
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      throw FormatError("CSV has more rows than its header declares (line " + std::to_string(lineno) + ")");
  }
  return m;
}

inline void write_matrix(const std::string& path, const Matrix& m, MatrixFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  if (format == MatrixFormat::csv)
    write_csv(out, m);
  else
    write_dmat(out, m);
  if (!out) throw FormatError("write failed for '" + path + "'");
}

inline Matrix read_matrix(const std::string& path, MatrixFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  if (format == MatrixFormat::csv) return read_csv(in);
  Matrix m = read_dmat(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("DMAT file '" + path + "' has trailing bytes");
  return m;
}

inline Matrix read_matrix(const std::string& path) { return read_matrix(path, format_from_path(path)); }

}  // namespace densebasis
