#pragma once

// Line-oriented helpers shared by the text file readers/writers.

#include "pauc/errors.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace pauc::detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw DataError("cannot open '" + path.string() + "' for reading");
  }

  bool next(std::string_view& line) {
    if (!std::getline(in_, buf_)) return false;
    ++line_no_;
    line = buf_;
    return true;
  }

  std::size_t line_no() const { return line_no_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  double parse_real(std::string_view tok) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail("cannot parse '" + std::string(tok) + "' as a real number");
    }
    if (!std::isfinite(v)) fail("non-finite value '" + std::string(tok) + "'");
    return v;
  }

  long parse_int(std::string_view tok) const {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail("cannot parse '" + std::string(tok) + "' as an integer");
    }
    return v;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::string buf_;
  std::size_t line_no_ = 0;
};

class LineWriter {
 public:
  explicit LineWriter(const std::filesystem::path& path) : path_(path), out_(path) {
    if (!out_) throw DataError("cannot open '" + path.string() + "' for writing");
  }

  std::ofstream& stream() { return out_; }

  void close() {
    out_.flush();
    if (!out_) throw DataError("write to '" + path_.string() + "' failed");
    out_.close();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace pauc::detail
