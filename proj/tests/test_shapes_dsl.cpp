#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "sgspen/errors.hpp"
#include "sgspen/rng.hpp"
#include "sgspen/shapes_dsl.hpp"

using namespace sgspen;
using namespace sgspen::shapes;

namespace {

int index_of(const Vocabulary& v, ShapeType t, int cx, int cy, int s) {
  return static_cast<int>(v.index_of(Token{true, Shape{t, cx, cy, s}, {}}));
}

int op_index(const Vocabulary& v, OpKind k) { return static_cast<int>(v.index_of(Token{false, {}, k})); }

// Per-pixel stack evaluation with plain bools.
std::vector<bool> pixel_oracle(const Vocabulary& v, const Program& p) {
  const int n = v.canvas();
  std::vector<std::vector<bool>> stack;
  for (int t : p) {
    if (v.is_shape(t)) {
      std::vector<bool> im(static_cast<std::size_t>(n * n));
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) im[static_cast<std::size_t>(r * n + c)] = covers(v[static_cast<std::size_t>(t)].shape, c, r);
      stack.push_back(im);
      continue;
    }
    auto b = stack.back();
    stack.pop_back();
    auto& a = stack.back();
    for (std::size_t i = 0; i < a.size(); ++i) {
      switch (v[static_cast<std::size_t>(t)].op) {
        case OpKind::union_: a[i] = a[i] || b[i]; break;
        case OpKind::intersect: a[i] = a[i] && b[i]; break;
        case OpKind::subtract: a[i] = a[i] && !b[i]; break;
      }
    }
  }
  return stack.back();
}

}  // namespace

TEST(Vocabulary, FullAndReducedSizes) {
  const Vocabulary full;
  EXPECT_EQ(full.num_shapes(), 396u);
  EXPECT_EQ(full.size(), 399u);
  const Vocabulary reduced(VocabularyConfig::reduced());
  EXPECT_EQ(reduced.num_shapes(), 27u);
  EXPECT_EQ(reduced.size(), 30u);
  EXPECT_TRUE(reduced.is_op(27));
  EXPECT_FALSE(reduced.is_shape(27));
  EXPECT_FALSE(reduced.is_op(30));
}

TEST(Vocabulary, IndexLookupRoundTrips) {
  const Vocabulary v;
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.index_of(v[i]), i);
  EXPECT_THROW(index_of(v, ShapeType::circle, 33, 32, 8), DataError);
  std::stringstream ss;
  v.write_manifest(ss);
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(first, "0\tcircle(8,8,8)");
}

TEST(Programs, ExactlyTwoLengthFivePatternsAreValid) {
  const Vocabulary v(VocabularyConfig::reduced());
  const int S = 0, O = op_index(v, OpKind::union_);
  int valid = 0;
  for (int mask = 0; mask < 32; ++mask) {
    Program p;
    for (int i = 4; i >= 0; --i) p.push_back((mask >> i) & 1 ? S : O);
    if (validate(v, p)) ++valid;
  }
  EXPECT_EQ(valid, 2);
  EXPECT_EQ(valid_patterns(5).size(), 2u);
  EXPECT_TRUE(validate(v, {S, S, S, O, O}));
  EXPECT_TRUE(validate(v, {S, S, O, S, O}));
  EXPECT_FALSE(validate(v, {S, O, S, S, O}));
  EXPECT_FALSE(validate(v, {S, S, S, S, O}));
  EXPECT_FALSE(validate(v, {S, S, O, S, 99}));
  EXPECT_EQ(valid_patterns(1).size(), 1u);
  EXPECT_EQ(valid_patterns(3).size(), 1u);
  EXPECT_EQ(valid_patterns(7).size(), 5u);  // Catalan(3)
}

TEST(Rasterizer, PixelCounts) {
  EXPECT_EQ(render_primitive({ShapeType::circle, 32, 32, 8}, 64).count(), 197u);
  EXPECT_EQ(render_primitive({ShapeType::square, 32, 32, 8}, 64).count(), 289u);
  EXPECT_EQ(render_primitive({ShapeType::square, 0, 0, 8}, 64).count(), 81u);
  EXPECT_EQ(render_primitive({ShapeType::circle, 0, 0, 0}, 64).count(), 1u);
}

TEST(Rasterizer, TriangleIsSymmetricAndContainsItsCorners) {
  const Shape t{ShapeType::triangle, 32, 32, 8};
  const auto im = render_primitive(t, 64);
  EXPECT_TRUE(im.get(24, 32));  // apex
  EXPECT_TRUE(im.get(40, 24));
  EXPECT_TRUE(im.get(40, 40));
  EXPECT_FALSE(im.get(24, 31));
  for (int r = 0; r < 64; ++r)
    for (int d = 0; d <= 16; ++d) EXPECT_EQ(im.get(r, 32 - d), im.get(r, 32 + d));
  // Row k below the apex spans |dx| <= k/2: widths 1,1,3,3,...,15,15,17.
  EXPECT_EQ(im.count(), 145u);
}

TEST(Execute, MatchesPixelOracleOnRandomPrograms) {
  const Vocabulary v;
  Rng rng(99);
  const auto pats = valid_patterns(5);
  for (int t = 0; t < 200; ++t) {
    const Program p = random_program(v, pats, rng);
    const auto im = execute(v, p);
    const auto ref = pixel_oracle(v, p);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) ASSERT_EQ(im.get(r, c), ref[static_cast<std::size_t>(r * 64 + c)]);
  }
}

TEST(Execute, NestedSquares) {
  const Vocabulary v;
  const int small = index_of(v, ShapeType::square, 32, 32, 8);
  const int big = index_of(v, ShapeType::square, 32, 32, 16);
  EXPECT_EQ(execute(v, {small, big, op_index(v, OpKind::union_)}).count(), 1089u);
  EXPECT_EQ(execute(v, {small, big, op_index(v, OpKind::intersect)}).count(), 289u);
  EXPECT_EQ(execute(v, {big, small, op_index(v, OpKind::subtract)}).count(), 800u);
  EXPECT_EQ(execute(v, {small, big, op_index(v, OpKind::subtract)}).count(), 0u);
}

TEST(Execute, UnionAndIntersectCommute) {
  const Vocabulary v;
  Rng rng(4);
  std::uniform_int_distribution<int> shape(0, static_cast<int>(v.num_shapes()) - 1);
  for (int t = 0; t < 100; ++t) {
    const int a = shape(rng), b = shape(rng);
    for (auto k : {OpKind::union_, OpKind::intersect})
      EXPECT_EQ(execute(v, {a, b, op_index(v, k)}), execute(v, {b, a, op_index(v, k)}));
  }
}

TEST(Execute, InvalidProgramsThrow) {
  const Vocabulary v(VocabularyConfig::reduced());
  EXPECT_THROW(execute(v, {27, 0, 1}), InvalidProgram);
  EXPECT_THROW(execute(v, {0, 1}), InvalidProgram);
  EXPECT_THROW(execute(v, {0, 1, 30}), InvalidProgram);
}

TEST(Iou, Basics) {
  BinaryImage a(4, 4), b(4, 4);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0);
  a.set(0, 0);
  a.set(1, 1);
  b.set(1, 1);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
  EXPECT_THROW(iou(a, BinaryImage(4, 5)), DataError);
}

TEST(Dataset, DistinctNonEmptyImagesFromValidPrograms) {
  const Vocabulary v;
  Rng rng(12);
  const auto ds = generate_dataset(300, rng, v);
  ASSERT_EQ(ds.size(), 300u);
  std::set<std::vector<std::uint64_t>> seen;
  for (const auto& it : ds) {
    EXPECT_TRUE(validate(v, it.program));
    EXPECT_FALSE(it.image.empty());
    EXPECT_EQ(execute(v, it.program), it.image);
    EXPECT_TRUE(seen.insert(it.image.words()).second);
  }
  Rng again(12);
  const auto ds2 = generate_dataset(300, again, v);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds[i].program, ds2[i].program);
}

TEST(Dataset, GivesUpWhenTheVocabularyIsTooSmall) {
  VocabularyConfig c;
  c.types = {ShapeType::square};
  c.grids = {{8, 32, 32, 8}};
  c.program_length = 1;
  const Vocabulary v(c);
  Rng rng(1);
  EXPECT_THROW(generate_dataset(2, rng, v), DataError);
}

TEST(FileFormats, ImagesAndProgramsRoundTrip) {
  const Vocabulary v(VocabularyConfig::reduced());
  Rng rng(3);
  const auto ds = generate_dataset(20, rng, v);
  std::vector<BinaryImage> ims;
  std::vector<Program> progs;
  for (const auto& it : ds) {
    ims.push_back(it.image);
    progs.push_back(it.program);
  }
  std::stringstream bin, pgm, txt;
  write_images_binary(bin, ims);
  write_images_pgm(pgm, ims);
  write_programs(txt, progs);
  EXPECT_EQ(read_images_binary(bin), ims);
  EXPECT_EQ(read_images_pgm(pgm), ims);
  EXPECT_EQ(read_programs(txt), progs);

  std::stringstream bad("GARBAGE!xxxxxxxxxxxxxxxx");
  EXPECT_THROW(read_images_binary(bad), DataError);
  std::stringstream badpgm("P5\n2 2\n1\n");
  EXPECT_THROW(read_images_pgm(badpgm), DataError);
  std::stringstream badprog("1 2 x\n");
  EXPECT_THROW(read_programs(badprog), DataError);
}
