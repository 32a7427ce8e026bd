#pragma once

// Minimal CSV reading and writing for numeric tables. No quoting support.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hyperst::csv {

inline std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error(where(path, line) + ": not a number: '" + std::string(s) + "'");
  }
  if (!std::isfinite(v)) throw std::runtime_error(where(path, line) + ": non-finite value '" + std::string(s) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view s, const std::filesystem::path& path, std::size_t line) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error(where(path, line) + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

class Reader {
 public:
  explicit Reader(std::filesystem::path path) : path_(std::move(path)), in_(path_) {
    if (!in_) throw std::runtime_error(path_.string() + ": cannot open");
    if (!std::getline(in_, header_line_)) throw std::runtime_error(path_.string() + ": empty file");
    strip(header_line_);
    for (auto f : split(header_line_)) header_.emplace_back(f);
    line_ = 1;
  }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t line() const { return line_; }

  /// Next non-empty row; fields view into an internal buffer valid until the next call.
  bool next(std::vector<std::string_view>& fields) {
    while (std::getline(in_, buffer_)) {
      ++line_;
      strip(buffer_);
      if (buffer_.empty()) continue;
      fields = split(buffer_);
      if (fields.size() != header_.size()) {
        throw std::runtime_error(where(path_, line_) + ": expected " + std::to_string(header_.size()) +
                                 " fields, got " + std::to_string(fields.size()));
      }
      return true;
    }
    return false;
  }

 private:
  static void strip(std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::string header_line_;
  std::string buffer_;
  std::vector<std::string> header_;
  std::size_t line_ = 0;
};

/// Doubles are written in shortest round-trip form, so a reload is bit-exact.
class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw std::runtime_error(path.string() + ": cannot open for writing");
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  void begin_row() { first_ = true; }
  void end_row() { out_ << '\n'; }

  void field(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    sep();
    out_.write(buf, res.ptr - buf);
  }
  void field(std::int64_t v) {
    sep();
    out_ << v;
  }
  void field(const std::string& s) {
    sep();
    out_ << s;
  }

  ~Writer() {
    out_.flush();
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }

  std::filesystem::path path_;
  std::ofstream out_;
  bool first_ = true;
};

}  // namespace hyperst::csv
