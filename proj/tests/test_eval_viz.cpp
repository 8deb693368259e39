#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "smtl/errors.hpp"
#include "smtl/eval.hpp"
#include "smtl/rng.hpp"

using namespace smtl;
using ag::Tensor;
using data::Dims;
using data::TumorMask;
using eval::Map2D;
using eval::Mask2D;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("select_slice picks the slice with the most tumor pixels") {
  TumorMask m(Dims{10, 10, 12}, 0);
  for (int j = 0; j < 5; ++j) m.at(3, j, 2) = 1;
  for (int j = 0; j < 3; ++j) m.at(4, j, 7) = 1;
  CHECK(eval::select_slice(m) == 2);

  SUBCASE("ties break to the smallest index") {
    TumorMask t(Dims{8, 8, 12}, 0);
    t.at(1, 1, 9) = 1;
    t.at(2, 2, 3) = 1;
    CHECK(eval::select_slice(t) == 3);
  }

  SUBCASE("empty mask is rejected") {
    CHECK_THROWS_AS(eval::select_slice(TumorMask(Dims{8, 8, 8}, 0)),
                    DataError);
  }

  SUBCASE("matches per-slice brute-force counting") {
    rng::Stream s(81);
    for (int trial = 0; trial < 50; ++trial) {
      TumorMask r(Dims{6, 6, 9}, 0);
      for (auto& b : r.bits) b = s.bernoulli(0.1) ? 1 : 0;
      if (r.foreground_count() == 0) r.at(0, 0, 4) = 1;
      int best = 0;
      int64_t best_count = -1;
      for (int k = 0; k < 9; ++k) {
        int64_t count = 0;
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) count += r.at(i, j, k);
        if (count > best_count) {
          best_count = count;
          best = k;
        }
      }
      CHECK(eval::select_slice(r) == best);
    }
  }
}

TEST_CASE("normalize_attention") {
  Map2D constant(2, 2);
  for (auto& v : constant.v) v = 4.2;
  const Map2D z = eval::normalize_attention(constant);
  for (double v : z.v) CHECK(v == 0.0);

  Map2D m(1, 3);
  m.v = {0.0, 5.0, 10.0};
  const Map2D n = eval::normalize_attention(m);
  CHECK(n.v[0] == 0.0);
  CHECK(n.v[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(n.v[2] == 1.0);

  rng::Stream s(82);
  for (int trial = 0; trial < 20; ++trial) {
    Map2D r(4, 5);
    for (auto& v : r.v) v = s.uniform(-3.0, 7.0);
    r.v[0] = -3.5;  // ensure non-constant
    const Map2D out = eval::normalize_attention(r);
    double lo = 1e9, hi = -1e9;
    for (double v : out.v) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
  }
}

TEST_CASE("dice_topk") {
  SUBCASE("top region identical to the ROI gives 1") {
    Map2D a(4, 4);
    Mask2D roi(4, 4);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        a.at(i, j) = 1.0;
        roi.at(i, j) = 1;
      }
    // k = 25% of 16 pixels: threshold at the 75th percentile, the four
    // ones are strictly above it.
    CHECK(eval::dice_topk(a, roi, 25.0) == doctest::Approx(1.0));
  }

  SUBCASE("disjoint sets give 0") {
    Map2D a(4, 4);
    Mask2D roi(4, 4);
    a.at(0, 0) = a.at(0, 1) = 1.0;
    roi.at(3, 3) = roi.at(3, 2) = 1;
    CHECK(eval::dice_topk(a, roi, 15.0) == 0.0);
  }

  SUBCASE("hand-worked 8x8 case at k = 25") {
    Map2D a(8, 8);
    Mask2D roi(8, 8);
    // 64 pixels; values 0..63 in scan order, so the top 25% are the 16
    // pixels with values > 47, i.e. linear indices 48..63.
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) a.at(i, j) = i * 8 + j;
    // ROI: rows 5..7 of the last two columns plus row 6 entirely.
    for (int i = 5; i < 8; ++i) {
      roi.at(i, 6) = 1;
      roi.at(i, 7) = 1;
    }
    for (int j = 0; j < 8; ++j) roi.at(6, j) = 1;

    // Explicit set arithmetic.
    int64_t rk = 0, gt = 0, inter = 0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const bool in_rk = i * 8 + j > 47;
        const bool in_gt = roi.at(i, j) != 0;
        rk += in_rk;
        gt += in_gt;
        inter += in_rk && in_gt;
      }
    const double expect =
        2.0 * static_cast<double>(inter) / static_cast<double>(rk + gt);
    CHECK(eval::dice_topk(a, roi, 25.0) == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("growing the ROI to cover the top region never lowers dice") {
    rng::Stream s(83);
    for (int trial = 0; trial < 30; ++trial) {
      Map2D a(6, 6);
      for (auto& v : a.v) v = s.uniform(0.0, 1.0);
      Mask2D roi(6, 6);
      for (auto& b : roi.v) b = s.bernoulli(0.3) ? 1 : 0;
      if (std::count(roi.v.begin(), roi.v.end(), 1) == 0) roi.v[0] = 1;
      const double before = eval::dice_topk(a, roi, 30.0);

      // Add every top-k pixel to the ROI.
      Map2D norm = a;
      Mask2D grown = roi;
      std::vector<double> sorted = a.v;
      std::sort(sorted.begin(), sorted.end());
      const double tau = sorted[static_cast<size_t>(
          std::lround(std::ceil(0.7 * 36.0))) - 1];
      for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] > tau) grown.v[i] = 1;
      const double after = eval::dice_topk(a, grown, 30.0);
      CHECK(after >= before - 1e-12);
      CHECK(before >= 0.0);
      CHECK(after <= 1.0);
    }
  }

  SUBCASE("k = 100 admits every pixel") {
    Map2D a(2, 2);
    a.v = {0.1, 0.2, 0.3, 0.4};
    Mask2D roi(2, 2);
    roi.v = {1, 1, 1, 1};
    CHECK(eval::dice_topk(a, roi, 100.0) == doctest::Approx(1.0));
  }

  SUBCASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(eval::dice_topk(Map2D(2, 2), Mask2D(3, 3), 30.0),
                    std::invalid_argument);
  }
}

TEST_CASE("intensity profiles through the centroid") {
  Map2D a(6, 8);
  Mask2D roi(6, 8);
  // Symmetric ROI centered at (row 3, col 4).
  for (int i = 2; i <= 4; ++i)
    for (int j = 3; j <= 5; ++j) roi.at(i, j) = 1;
  a.at(3, 4) = 9.0;  // delta peak at the centroid

  const eval::Profiles p = eval::intensity_profiles(a, roi);
  CHECK(p.cy == 3);
  CHECK(p.cx == 4);
  CHECK(p.horizontal.size() == 8);
  CHECK(p.vertical.size() == 6);
  CHECK(p.horizontal[4] == 9.0);
  CHECK(p.vertical[3] == 9.0);
  for (size_t j = 0; j < 8; ++j)
    if (j != 4) CHECK(p.horizontal[j] == 0.0);

  CHECK_THROWS_AS(eval::intensity_profiles(a, Mask2D(6, 8)), DataError);
}

TEST_CASE("attention_stats") {
  SUBCASE("constant attention: ratio 1, all ties give p = 1") {
    Tensor a({2, 2, 2}, 0.7);
    TumorMask m(Dims{2, 2, 2}, 0);
    m.at(0, 0, 0) = 1;
    const auto st = eval::attention_stats(a, m);
    CHECK(st.ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.p == 1.0);
  }

  SUBCASE("worked means: {10,11} roi vs {1,2} background") {
    Tensor a({1, 2, 2}, {10.0, 11.0, 1.0, 2.0});
    TumorMask m(Dims{2, 2, 1}, 0);
    m.at(0, 0, 0) = 1;
    m.at(0, 1, 0) = 1;
    const auto st = eval::attention_stats(a, m);
    CHECK(st.mean_roi == doctest::Approx(10.5).epsilon(1e-12));
    CHECK(st.mean_bg == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(st.ratio == doctest::Approx(7.0).epsilon(1e-12));
  }

  SUBCASE("scaling all values by c > 0 keeps ratio and p") {
    rng::Stream s(84);
    Tensor a({4, 4, 4});
    for (auto& v : a.data) v = s.uniform(0.1, 1.0);
    TumorMask m(Dims{4, 4, 4}, 0);
    for (auto& b : m.bits) b = s.bernoulli(0.4) ? 1 : 0;
    m.bits[0] = 1;
    m.bits[1] = 0;
    const auto base = eval::attention_stats(a, m);
    Tensor scaled = a;
    for (auto& v : scaled.data) v *= 3.7;
    const auto big = eval::attention_stats(scaled, m);
    CHECK(big.ratio == doctest::Approx(base.ratio).epsilon(1e-12));
    CHECK(big.p == doctest::Approx(base.p).epsilon(1e-12));
  }

  SUBCASE("one empty class is rejected") {
    Tensor a({2, 2, 2}, 0.5);
    CHECK_THROWS_AS(eval::attention_stats(a, TumorMask(Dims{2, 2, 2}, 1)),
                    DataError);
  }
}

TEST_CASE("nearest-neighbor upsampling repeats blocks") {
  Tensor a({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor up = eval::upsample_nearest(a, 2);
  CHECK(up.shape == ag::Shape{2, 4, 4});
  CHECK(up[0] == 1.0);
  CHECK(up[1] == 1.0);
  CHECK(up[2] == 2.0);
  CHECK(up[(0 * 4 + 2) * 4 + 0] == 3.0);
  CHECK(up[(1 * 4 + 1) * 4 + 1] == 1.0);  // second slice repeats the first
}

TEST_CASE("heatmap export uses the blue-to-red colormap") {
  const auto dir = std::filesystem::temp_directory_path() / "smtl_heatmap";
  std::filesystem::create_directories(dir);

  Map2D zeros(2, 2);
  eval::export_heatmap(zeros, dir / "blue.ppm");
  const std::string blue = read_bytes(dir / "blue.ppm");
  CHECK(blue.substr(0, 11) == "P6\n2 2\n255\n");
  REQUIRE(blue.size() == 11 + 12);
  for (int px = 0; px < 4; ++px) {
    CHECK(static_cast<unsigned char>(blue[11 + 3 * px + 0]) == 0);
    CHECK(static_cast<unsigned char>(blue[11 + 3 * px + 1]) == 0);
    CHECK(static_cast<unsigned char>(blue[11 + 3 * px + 2]) == 255);
  }

  Map2D mix(1, 3);
  mix.v = {1.0, 0.5, 0.0};
  eval::export_heatmap(mix, dir / "mix.ppm");
  const std::string bytes = read_bytes(dir / "mix.ppm");
  const size_t base = std::string("P6\n3 1\n255\n").size();
  CHECK(static_cast<unsigned char>(bytes[base + 0]) == 255);  // pure red
  CHECK(static_cast<unsigned char>(bytes[base + 1]) == 0);
  CHECK(static_cast<unsigned char>(bytes[base + 2]) == 0);
  CHECK(static_cast<unsigned char>(bytes[base + 3]) == 128);  // 0.5
  CHECK(static_cast<unsigned char>(bytes[base + 4]) == 0);
  CHECK(static_cast<unsigned char>(bytes[base + 5]) == 127);

  std::filesystem::remove_all(dir);
}

TEST_CASE("attention report CSV round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "smtl_report";
  std::filesystem::create_directories(dir);

  std::vector<eval::CaseReport> rows;
  for (int i = 0; i < 3; ++i) {
    eval::CaseReport r;
    r.id = "case_" + std::to_string(i);
    r.slice = 4 + i;
    r.dice = 0.123456789012 + i;
    r.stats.mean_roi = 0.7 + 1e-11 * i;
    r.stats.mean_bg = 0.1;
    r.stats.ratio = r.stats.mean_roi / r.stats.mean_bg;
    r.stats.p = 1e-4;
    rows.push_back(r);
  }
  eval::write_attention_report_csv(dir / "attention_report.csv", rows);

  std::ifstream in(dir / "attention_report.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "case_id,slice,dice,mean_roi,mean_bg,ratio,p_value");
  int n = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    CHECK(cell == rows[static_cast<size_t>(n)].id);
    std::getline(ss, cell, ',');
    CHECK(std::stoi(cell) == rows[static_cast<size_t>(n)].slice);
    std::getline(ss, cell, ',');
    CHECK(std::stod(cell) ==
          doctest::Approx(rows[static_cast<size_t>(n)].dice).epsilon(1e-9));
    std::getline(ss, cell, ',');
    CHECK(std::stod(cell) ==
          doctest::Approx(rows[static_cast<size_t>(n)].stats.mean_roi)
              .epsilon(1e-9));
    ++n;
  }
  CHECK(n == 3);

  // Header-only file for an empty case list.
  eval::write_attention_report_csv(dir / "empty.csv", {});
  std::ifstream empty(dir / "empty.csv");
  std::getline(empty, line);
  CHECK(line == "case_id,slice,dice,mean_roi,mean_bg,ratio,p_value");
  CHECK_FALSE(std::getline(empty, line));

  std::filesystem::remove_all(dir);
}
