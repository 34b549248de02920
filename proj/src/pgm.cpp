#include "cdt/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "cdt/error.hpp"

namespace cdt {
namespace {

void check_image_shape(const Tensor& img, const char* what) {
  const Shape& s = img.shape();
  bool ok = (s.size() == 2) || (s.size() == 3 && s[0] == 1);
  if (!ok)
    throw shape_error(std::string(what) + ": expected HxW or 1xHxW, got " + shape_str(s));
}

void write_grid(const std::filesystem::path& path, int h, int w,
                const std::vector<int>& px) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "P2\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x) out << ' ';
      out << px[static_cast<size_t>(y) * w + x];
    }
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path.string());
}

// Tokenizer that skips whitespace and '#' comments.
class PgmTokens {
 public:
  PgmTokens(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::string next() {
    std::string tok;
    int c;
    while ((c = in_.get()) != EOF) {
      if (c == '#') {
        while ((c = in_.get()) != EOF && c != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw io_error("truncated pgm: " + path_);
    return tok;
  }

  long next_int() {
    std::string tok = next();
    try {
      size_t pos = 0;
      long v = std::stol(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw io_error("bad integer token '" + tok + "' in " + path_);
    }
  }

 private:
  std::istream& in_;
  std::string path_;
};

std::vector<int> read_grid(const std::filesystem::path& path, int& h, int& w) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path.string());
  PgmTokens tok(in, path.string());
  if (tok.next() != "P2") throw io_error("not an ascii pgm: " + path.string());
  long lw = tok.next_int();
  long lh = tok.next_int();
  long maxv = tok.next_int();
  if (lw < 1 || lh < 1 || lw > 1 << 16 || lh > 1 << 16)
    throw io_error("bad pgm extents in " + path.string());
  if (maxv != 255) throw io_error("unsupported pgm maxval in " + path.string());
  w = static_cast<int>(lw);
  h = static_cast<int>(lh);
  std::vector<int> px(static_cast<size_t>(h) * w);
  for (auto& v : px) {
    long p = tok.next_int();
    if (p < 0 || p > 255) throw io_error("pixel out of range in " + path.string());
    v = static_cast<int>(p);
  }
  return px;
}

} // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& img) {
  check_image_shape(img, "write_pgm");
  const Shape& s = img.shape();
  int h = s[s.size() - 2], w = s[s.size() - 1];
  std::vector<int> px(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    double v = img[i];
    if (!std::isfinite(v)) throw numeric_error("write_pgm: non-finite pixel");
    double q = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0);
    px[i] = static_cast<int>(q);
  }
  write_grid(path, h, w, px);
}

Tensor read_pgm(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<int> px = read_grid(path, h, w);
  std::vector<double> out(px.size());
  for (size_t i = 0; i < px.size(); ++i) out[i] = px[i] / 255.0 * 2.0 - 1.0;
  return Tensor::from_data({1, h, w}, std::move(out));
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask) {
  check_image_shape(mask, "write_mask_pgm");
  const Shape& s = mask.shape();
  int h = s[s.size() - 2], w = s[s.size() - 1];
  std::vector<int> px(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    double v = mask[i];
    if (v != 0.0 && v != 1.0)
      throw contract_error("write_mask_pgm: mask values must be exactly 0 or 1");
    px[i] = v == 1.0 ? 255 : 0;
  }
  write_grid(path, h, w, px);
}

Tensor read_mask_pgm(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<int> px = read_grid(path, h, w);
  std::vector<double> out(px.size());
  for (size_t i = 0; i < px.size(); ++i) out[i] = px[i] >= 128 ? 1.0 : 0.0;
  return Tensor::from_data({h, w}, std::move(out));
}

} // namespace cdt
