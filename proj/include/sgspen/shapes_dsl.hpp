#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "sgspen/errors.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/tensor.hpp"

namespace sgspen::shapes {

/// Fixed-size bitmap, row-major, (0,0) top-left. Rows are packed into 64-bit
/// words so boolean composition and pixel counting are word operations.
class BinaryImage {
 public:
  BinaryImage() = default;
  BinaryImage(int height, int width)
      : height_(height), width_(width), words_per_row_((width + 63) / 64),
        bits_(static_cast<std::size_t>(height) * static_cast<std::size_t>(words_per_row_), 0) {}

  int height() const { return height_; }
  int width() const { return width_; }

  bool get(int row, int col) const {
    return (bits_[index(row, col)] >> (col & 63)) & 1U;
  }
  void set(int row, int col, bool v = true) {
    auto& w = bits_[index(row, col)];
    const std::uint64_t m = std::uint64_t{1} << (col & 63);
    w = v ? (w | m) : (w & ~m);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : bits_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const {
    return std::all_of(bits_.begin(), bits_.end(), [](std::uint64_t w) { return w == 0; });
  }

  BinaryImage& operator|=(const BinaryImage& o) { return combine(o, [](auto a, auto b) { return a | b; }); }
  BinaryImage& operator&=(const BinaryImage& o) { return combine(o, [](auto a, auto b) { return a & b; }); }
  /// this AND NOT o.
  BinaryImage& subtract(const BinaryImage& o) { return combine(o, [](auto a, auto b) { return a & ~b; }); }

  const std::vector<std::uint64_t>& words() const { return bits_; }

  /// Pixels as 0/1 reals, row-major; the energy network's image input.
  std::vector<double> to_reals() const {
    std::vector<double> out(static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_));
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        out[static_cast<std::size_t>(r) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c)] =
            get(r, c) ? 1.0 : 0.0;
    return out;
  }

  bool same_dims(const BinaryImage& o) const { return height_ == o.height_ && width_ == o.width_; }

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;

  std::size_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(height_ * 131 + width_);
    for (auto w : bits_) h = detail::splitmix64(h ^ w);
    return static_cast<std::size_t>(h);
  }

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(words_per_row_) +
           static_cast<std::size_t>(col >> 6);
  }

  template <typename F>
  BinaryImage& combine(const BinaryImage& o, F f) {
    if (!same_dims(o)) throw DataError("BinaryImage: dimension mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = f(bits_[i], o.bits_[i]);
    return *this;
  }

  int height_ = 0;
  int width_ = 0;
  int words_per_row_ = 0;
  std::vector<std::uint64_t> bits_;
};

struct ImageHash {
  std::size_t operator()(const BinaryImage& im) const { return im.hash(); }
};

enum class ShapeType { circle, triangle, square };
enum class OpKind { union_, intersect, subtract };

inline const char* to_string(ShapeType t) {
  switch (t) {
    case ShapeType::circle: return "circle";
    case ShapeType::triangle: return "triangle";
    case ShapeType::square: return "square";
  }
  return "?";
}

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::union_: return "union";
    case OpKind::intersect: return "intersect";
    case OpKind::subtract: return "subtract";
  }
  return "?";
}

struct Shape {
  ShapeType type;
  int cx, cy, s;
  friend auto operator<=>(const Shape&, const Shape&) = default;
};

struct Token {
  bool is_shape = true;
  Shape shape{};
  OpKind op{};

  std::string describe() const {
    if (!is_shape) return to_string(op);
    return std::string(to_string(shape.type)) + "(" + std::to_string(shape.cx) + "," +
           std::to_string(shape.cy) + "," + std::to_string(shape.s) + ")";
  }
};

/// Center grid for one scale: centers lo, lo+step, ..., hi on both axes.
struct ScaleGrid {
  int scale;
  int lo, hi, step;
};

struct VocabularyConfig {
  int canvas = 64;
  std::vector<ShapeType> types{ShapeType::circle, ShapeType::triangle, ShapeType::square};
  std::vector<ScaleGrid> grids{
      {8, 8, 56, 8},
      {12, 8, 56, 8},
      {16, 16, 48, 8},
      {24, 24, 40, 8},
  };
  int program_length = 5;

  /// 1 scale, 3x3 centers, 3 types: 27 shapes + 3 operations.
  static VocabularyConfig reduced() {
    VocabularyConfig c;
    c.grids = {{12, 16, 48, 16}};
    return c;
  }
};

inline BinaryImage render_primitive(const Shape& sh, int canvas);

/// Index <-> token table. Shapes come first, sorted by (type, scale, cy, cx),
/// then the operations union, intersect, subtract.
class Vocabulary {
 public:
  explicit Vocabulary(VocabularyConfig cfg = {}) : cfg_(std::move(cfg)) {
    if (cfg_.canvas <= 0) throw ConfigError("vocabulary: canvas must be positive");
    if (cfg_.program_length < 1) throw ConfigError("vocabulary: program length must be >= 1");
    std::vector<Shape> shapes;
    for (auto t : cfg_.types)
      for (const auto& g : cfg_.grids) {
        if (g.step <= 0 || g.hi < g.lo || g.scale <= 0)
          throw ConfigError("vocabulary: invalid center grid for scale " + std::to_string(g.scale));
        for (int cy = g.lo; cy <= g.hi; cy += g.step)
          for (int cx = g.lo; cx <= g.hi; cx += g.step) shapes.push_back({t, cx, cy, g.scale});
      }
    std::sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) {
      return std::tie(a.type, a.s, a.cy, a.cx) < std::tie(b.type, b.s, b.cy, b.cx);
    });
    if (std::adjacent_find(shapes.begin(), shapes.end()) != shapes.end())
      throw ConfigError("vocabulary: grid produces duplicate shapes");
    for (const auto& s : shapes) {
      tokens_.push_back(Token{true, s, {}});
      primitives_.push_back(render_primitive(s, cfg_.canvas));
    }
    num_shapes_ = tokens_.size();
    for (auto k : {OpKind::union_, OpKind::intersect, OpKind::subtract})
      tokens_.push_back(Token{false, {}, k});
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_shapes() const { return num_shapes_; }
  const Token& operator[](std::size_t i) const { return tokens_.at(i); }
  const std::vector<Token>& tokens() const { return tokens_; }
  const VocabularyConfig& config() const { return cfg_; }
  int canvas() const { return cfg_.canvas; }
  int program_length() const { return cfg_.program_length; }
  bool is_shape(int idx) const { return idx >= 0 && static_cast<std::size_t>(idx) < num_shapes_; }
  bool is_op(int idx) const {
    return static_cast<std::size_t>(idx) >= num_shapes_ && static_cast<std::size_t>(idx) < tokens_.size();
  }
  /// Cached rasterization of shape token idx.
  const BinaryImage& primitive(int idx) const { return primitives_.at(static_cast<std::size_t>(idx)); }

  std::size_t index_of(const Token& t) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const auto& u = tokens_[i];
      if (u.is_shape != t.is_shape) continue;
      if (t.is_shape ? u.shape == t.shape : u.op == t.op) return i;
    }
    throw DataError("vocabulary: token " + t.describe() + " not present");
  }

  /// Manifest: one line per token, "index<TAB>description".
  void write_manifest(std::ostream& os) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << i << '\t' << tokens_[i].describe() << '\n';
  }

 private:
  VocabularyConfig cfg_;
  std::vector<Token> tokens_;
  std::vector<BinaryImage> primitives_;
  std::size_t num_shapes_ = 0;
};

using Program = std::vector<int>;

// ---- rasterization ----------------------------------------------------------

/// Pixel predicate for a primitive; the rasterizer and its tests share nothing
/// else.
inline bool covers(const Shape& sh, int px, int py) {
  const int dx = px - sh.cx, dy = py - sh.cy;
  switch (sh.type) {
    case ShapeType::circle:
      return dx * dx + dy * dy <= sh.s * sh.s;
    case ShapeType::square:
      return std::abs(dx) <= sh.s && std::abs(dy) <= sh.s;
    case ShapeType::triangle: {
      // Apex (cx, cy-s), base corners (cx-s, cy+s), (cx+s, cy+s); counter-
      // clockwise in image coordinates. Inclusive half-plane tests.
      const long ax = sh.cx, ay = sh.cy - sh.s;
      const long bx = sh.cx - sh.s, by = sh.cy + sh.s;
      const long cx = sh.cx + sh.s, cy = sh.cy + sh.s;
      auto edge = [&](long x0, long y0, long x1, long y1) {
        return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
      };
      const long e0 = edge(ax, ay, bx, by);
      const long e1 = edge(bx, by, cx, cy);
      const long e2 = edge(cx, cy, ax, ay);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

inline BinaryImage render_primitive(const Shape& sh, int canvas) {
  BinaryImage im(canvas, canvas);
  const int r0 = std::max(0, sh.cy - sh.s), r1 = std::min(canvas - 1, sh.cy + sh.s);
  const int c0 = std::max(0, sh.cx - sh.s), c1 = std::min(canvas - 1, sh.cx + sh.s);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (covers(sh, c, r)) im.set(r, c);
  return im;
}

// ---- programs ---------------------------------------------------------------

/// Postfix validity: shapes push, operations pop two and push one, no
/// underflow, exactly one image left.
inline bool validate(const Vocabulary& vocab, const Program& p) {
  int depth = 0;
  for (int t : p) {
    if (vocab.is_shape(t)) {
      ++depth;
    } else if (vocab.is_op(t)) {
      if (depth < 2) return false;
      --depth;
    } else {
      return false;
    }
  }
  return depth == 1;
}

struct InvalidProgram : DataError {
  using DataError::DataError;
};

/// Stack machine over images. subtract computes (earlier operand) AND NOT
/// (later operand).
inline BinaryImage execute(const Vocabulary& vocab, const Program& p) {
  std::vector<BinaryImage> stack;
  stack.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int t = p[i];
    if (vocab.is_shape(t)) {
      stack.push_back(vocab.primitive(t));
      continue;
    }
    if (!vocab.is_op(t))
      throw InvalidProgram("program token " + std::to_string(t) + " outside vocabulary");
    if (stack.size() < 2)
      throw InvalidProgram("stack underflow at position " + std::to_string(i));
    BinaryImage rhs = std::move(stack.back());
    stack.pop_back();
    BinaryImage& lhs = stack.back();
    switch (vocab[static_cast<std::size_t>(t)].op) {
      case OpKind::union_: lhs |= rhs; break;
      case OpKind::intersect: lhs &= rhs; break;
      case OpKind::subtract: lhs.subtract(rhs); break;
    }
  }
  if (stack.size() != 1)
    throw InvalidProgram("program leaves " + std::to_string(stack.size()) + " images on the stack");
  return std::move(stack.back());
}

/// |a AND b| / |a OR b|, 1 when both are empty.
inline double iou(const BinaryImage& a, const BinaryImage& b) {
  if (!a.same_dims(b)) throw DataError("iou: image dimension mismatch");
  const auto& wa = a.words();
  const auto& wb = b.words();
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
    uni += static_cast<std::size_t>(std::popcount(wa[i] | wb[i]));
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---- dataset generation -----------------------------------------------------

struct ImageProgram {
  BinaryImage image;
  Program program;
};

/// Uniform random valid program: uniform over the valid shape/op patterns,
/// then uniform shapes and operations within the pattern.
inline Program random_program(const Vocabulary& vocab, const std::vector<std::vector<bool>>& patterns,
                              Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick_pattern(0, patterns.size() - 1);
  std::uniform_int_distribution<int> pick_shape(0, static_cast<int>(vocab.num_shapes()) - 1);
  std::uniform_int_distribution<int> pick_op(static_cast<int>(vocab.num_shapes()),
                                             static_cast<int>(vocab.size()) - 1);
  const auto& pat = patterns[pick_pattern(rng)];
  Program p(pat.size());
  for (std::size_t i = 0; i < pat.size(); ++i) p[i] = pat[i] ? pick_shape(rng) : pick_op(rng);
  return p;
}

/// All shape(true)/op(false) patterns of the configured length that form a
/// valid postfix program.
inline std::vector<std::vector<bool>> valid_patterns(int length) {
  std::vector<std::vector<bool>> out;
  for (unsigned mask = 0; mask < (1U << length); ++mask) {
    std::vector<bool> pat(static_cast<std::size_t>(length));
    int depth = 0;
    bool ok = true;
    for (int i = 0; i < length; ++i) {
      pat[static_cast<std::size_t>(i)] = (mask >> (length - 1 - i)) & 1U;
      if (pat[static_cast<std::size_t>(i)]) {
        ++depth;
      } else if (depth < 2) {
        ok = false;
      } else {
        --depth;
      }
    }
    if (ok && depth == 1) out.push_back(std::move(pat));
  }
  return out;
}

/// n pairs with distinct non-empty images; gives up after 100n draws.
inline std::vector<ImageProgram> generate_dataset(std::size_t n, Rng& rng, const Vocabulary& vocab) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  const auto patterns = valid_patterns(vocab.program_length());
  if (patterns.empty()) throw ConfigError("generate_dataset: no valid program pattern of this length");
  std::vector<ImageProgram> out;
  std::unordered_set<BinaryImage, ImageHash> seen;
  const std::size_t max_attempts = 100 * n;
  for (std::size_t attempt = 0; attempt < max_attempts && out.size() < n; ++attempt) {
    Program p = random_program(vocab, patterns, rng);
    BinaryImage im = execute(vocab, p);
    if (im.empty() || seen.count(im)) continue;
    seen.insert(im);
    out.push_back({std::move(im), std::move(p)});
  }
  if (out.size() < n)
    throw DataError("generate_dataset: only " + std::to_string(out.size()) + " distinct images after " +
                    std::to_string(max_attempts) + " attempts");
  return out;
}

// ---- file formats -----------------------------------------------------------
//
// Binary image container:
//   magic "SGSPIMG\0", u32 version (1), u32 count, u32 height, u32 width,
//   then per image height * ceil(width/64) little-endian u64 words.
// Plain graymap (P2): consecutive PGM images, maxval 1.

inline constexpr char kImageMagic[8] = {'S', 'G', 'S', 'P', 'I', 'M', 'G', '\0'};

inline void write_images_binary(std::ostream& os, const std::vector<BinaryImage>& images) {
  os.write(kImageMagic, sizeof(kImageMagic));
  detail::write_le<std::uint32_t>(os, 1);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(images.size()));
  const int h = images.empty() ? 0 : images[0].height();
  const int w = images.empty() ? 0 : images[0].width();
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  for (const auto& im : images) {
    if (im.height() != h || im.width() != w) throw DataError("image container: mixed dimensions");
    for (auto word : im.words()) detail::write_le<std::uint64_t>(os, word);
  }
}

inline std::vector<BinaryImage> read_images_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0)
    throw DataError("image container: bad magic bytes");
  if (detail::read_le<std::uint32_t>(is) != 1) throw DataError("image container: unsupported version");
  const auto n = detail::read_le<std::uint32_t>(is);
  const auto h = static_cast<int>(detail::read_le<std::uint32_t>(is));
  const auto w = static_cast<int>(detail::read_le<std::uint32_t>(is));
  std::vector<BinaryImage> out;
  out.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    BinaryImage im(h, w);
    for (int r = 0; r < h; ++r)
      for (int c0 = 0; c0 < w; c0 += 64) {
        const auto word = detail::read_le<std::uint64_t>(is);
        for (int b = 0; b < 64 && c0 + b < w; ++b)
          if ((word >> b) & 1U) im.set(r, c0 + b);
      }
    out.push_back(std::move(im));
  }
  return out;
}

inline void write_images_pgm(std::ostream& os, const std::vector<BinaryImage>& images) {
  for (const auto& im : images) {
    os << "P2\n" << im.width() << ' ' << im.height() << "\n1\n";
    for (int r = 0; r < im.height(); ++r) {
      for (int c = 0; c < im.width(); ++c) os << (c ? " " : "") << (im.get(r, c) ? 1 : 0);
      os << '\n';
    }
  }
}

inline std::vector<BinaryImage> read_images_pgm(std::istream& is) {
  std::vector<BinaryImage> out;
  std::string magic;
  while (is >> magic) {
    if (magic != "P2") throw DataError("pgm: expected P2 header, got '" + magic + "'");
    int w = 0, h = 0, maxval = 0;
    if (!(is >> w >> h >> maxval) || w <= 0 || h <= 0 || maxval <= 0)
      throw DataError("pgm: bad header");
    BinaryImage im(h, w);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int v;
        if (!(is >> v)) throw DataError("pgm: truncated pixel data");
        if (v > 0) im.set(r, c);
      }
    out.push_back(std::move(im));
  }
  return out;
}

inline void write_programs(std::ostream& os, const std::vector<Program>& programs) {
  for (const auto& p : programs) {
    for (std::size_t i = 0; i < p.size(); ++i) os << (i ? " " : "") << p[i];
    os << '\n';
  }
}

inline std::vector<Program> read_programs(std::istream& is) {
  std::vector<Program> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Program p;
    int t;
    while (ls >> t) p.push_back(t);
    if (!ls.eof()) throw DataError("programs: malformed line " + std::to_string(lineno));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace sgspen::shapes
