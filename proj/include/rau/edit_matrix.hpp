#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "rau/errors.hpp"

namespace rau {

enum class EditClass : std::uint8_t { None = 0, Substitute = 1, Insert = 2 };

inline constexpr std::size_t kNumEditClasses = 3;

/// rows = |c|; cols = |x|, or |x|+1 when the last column anchors end-of-utterance inserts.
class EditMatrix {
 public:
  EditMatrix() = default;
  EditMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, EditClass::None) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  EditClass at(std::size_t r, std::size_t c) const { return cells_[index(r, c)]; }
  void set(std::size_t r, std::size_t c, EditClass v) { cells_[index(r, c)] = v; }

  const std::vector<EditClass>& cells() const { return cells_; }

  std::size_t count(EditClass k) const {
    std::size_t n = 0;
    for (auto v : cells_) n += v == k;
    return n;
  }

  /// Copy with `cols` columns: extra columns are None, dropped columns are cut.
  EditMatrix with_cols(std::size_t cols) const {
    EditMatrix out(rows_, cols);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < std::min(cols, cols_); ++c) out.set(r, c, at(r, c));
    return out;
  }

  bool operator==(const EditMatrix&) const = default;

 private:
  std::size_t index(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_)
      throw IndexOutOfRange("edit matrix cell (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                            std::to_string(rows_) + "x" + std::to_string(cols_));
    return r * cols_ + c;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<EditClass> cells_;
};

/// Row-major run-length encoding, e.g. "0*30,2*2,0*12".
inline std::string run_length_encode(const EditMatrix& em) {
  std::ostringstream out;
  const auto& cells = em.cells();
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t j = i;
    while (j < cells.size() && cells[j] == cells[i]) ++j;
    if (i > 0) out << ',';
    out << static_cast<int>(cells[i]) << '*' << (j - i);
    i = j;
  }
  return out.str();
}

inline EditMatrix run_length_decode(const std::string& text, std::size_t rows, std::size_t cols) {
  EditMatrix em(rows, cols);
  std::size_t pos = 0;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto star = item.find('*');
    if (star == std::string::npos) throw DataError("bad run '" + item + "'");
    int v = std::stoi(item.substr(0, star));
    auto n = static_cast<std::size_t>(std::stoul(item.substr(star + 1)));
    if (v < 0 || v > 2 || pos + n > rows * cols) throw DataError("bad run '" + item + "'");
    for (std::size_t k = 0; k < n; ++k, ++pos) em.set(pos / cols, pos % cols, static_cast<EditClass>(v));
  }
  if (pos != rows * cols) throw DataError("run-length payload covers " + std::to_string(pos) + " cells");
  return em;
}

}  // namespace rau
