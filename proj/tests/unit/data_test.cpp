#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "tkvseg/dataset.hpp"
#include "tkvseg/metaimage.hpp"
#include "tkvseg/phantom.hpp"
#include "tkvseg/preprocess.hpp"

using namespace tkvseg;
namespace fs = std::filesystem;

namespace {

ImageVolume random_image(Index3 dims, Vec3 spacing, std::mt19937_64& rng) {
  ImageVolume v(dims, spacing, {1.25, -3.5, 0.0625});
  std::uniform_real_distribution<float> u(-1000.0f, 1000.0f);
  for (auto& x : v.data) x = u(rng);
  return v;
}

LabelVolume random_labels(Index3 dims, Vec3 spacing, std::mt19937_64& rng, int classes = 3) {
  LabelVolume v(dims, spacing);
  for (auto& x : v.data) x = static_cast<std::uint8_t>(rng() % classes);
  return v;
}

std::set<std::uint8_t> label_set(const LabelVolume& v) { return {v.data.begin(), v.data.end()}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST(MetaImage, FloatRoundTripIsBitExact) {
  const auto dir = oracle::scratch_dir("mha_float");
  std::mt19937_64 rng(1);
  const auto v = random_image({4, 4, 4}, {1.5, 1.5, 1.5}, rng);
  for (const char* name : {"a.mha", "b.mhd"}) {
    write_volume(v, dir / name);
    const auto back = read_image(dir / name);
    EXPECT_EQ(back, v) << name;
    EXPECT_TRUE(std::holds_alternative<ImageVolume>(read_volume(dir / name)));
  }
  EXPECT_TRUE(fs::exists(dir / "b.raw"));
}

TEST(MetaImage, LabelRoundTripAndAnisotropicSpacing) {
  const auto dir = oracle::scratch_dir("mha_label");
  std::mt19937_64 rng(2);
  const auto v = random_labels({3, 5, 7}, {0.5, 0.7, 0.7}, rng);
  write_volume(v, dir / "m.mha");
  const auto back = read_labels(dir / "m.mha");
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.spacing, (Vec3{0.5, 0.7, 0.7}));
  const auto widened = read_image(dir / "m.mha");
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(widened.data[i], static_cast<float>(v.data[i]));
}

TEST(MetaImage, HeaderIsMetaImageText) {
  const auto dir = oracle::scratch_dir("mha_header");
  LabelVolume v({2, 3, 4}, {1.0, 2.0, 3.0});
  write_volume(v, dir / "h.mhd");
  const std::string text = slurp(dir / "h.mhd");
  EXPECT_NE(text.find("NDims = 3"), std::string::npos);
  // DimSize is x, y, z on disk.
  EXPECT_NE(text.find("DimSize = 4 3 2"), std::string::npos);
  EXPECT_NE(text.find("ElementSpacing = 3 2 1"), std::string::npos);
  EXPECT_NE(text.find("ElementType = MET_UCHAR"), std::string::npos);
  EXPECT_NE(text.find("ElementDataFile = h.raw"), std::string::npos);
}

TEST(MetaImage, SizeMismatchIsIntegrityError) {
  const auto dir = oracle::scratch_dir("mha_integrity");
  ImageVolume v({2, 2, 2}, {1, 1, 1});
  write_volume(v, dir / "v.mhd");
  std::string text = slurp(dir / "v.mhd");
  text.replace(text.find("DimSize = 2 2 2"), 15, "DimSize = 2 2 3");
  spit(dir / "v.mhd", text);
  EXPECT_THROW(read_image(dir / "v.mhd"), IntegrityError);
  write_volume(v, dir / "w.mha");
  std::string local = slurp(dir / "w.mha");
  spit(dir / "w.mha", local.substr(0, local.size() - 4));
  EXPECT_THROW(read_image(dir / "w.mha"), IntegrityError);
  EXPECT_THROW(read_labels(dir / "v.mhd"), IntegrityError);
}

TEST(MetaImage, MalformedHeaderReportsLine) {
  const auto dir = oracle::scratch_dir("mha_parse");
  spit(dir / "bad.mhd", "ObjectType = Image\nNDims = 3\nDimSize 2 2 2\n");
  try {
    read_image(dir / "bad.mhd");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  spit(dir / "bad2.mhd", "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\nElementDataFile = x.raw\n");
  try {
    read_image(dir / "bad2.mhd");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(read_image(dir / "missing.mhd"), IoError);
}

TEST(Resample, IdentityAtTargetSpacing) {
  std::mt19937_64 rng(3);
  const auto v = random_image({5, 6, 7}, {1.5, 1.5, 1.5}, rng);
  const auto out = resample_isotropic(v, 1.5, Interp::trilinear);
  EXPECT_EQ(out.dims, v.dims);
  EXPECT_EQ(out.data, v.data);
  const auto m = random_labels({5, 6, 7}, {1.5, 1.5, 1.5}, rng);
  EXPECT_EQ(resample_isotropic(m, 1.5, Interp::nearest).data, m.data);
}

TEST(Resample, DimsRuleAndConstantPreserved) {
  ImageVolume v({10, 20, 33}, {3.0, 0.75, 1.0}, {0, 0, 0}, 42.5f);
  const auto out = resample_isotropic(v, 1.5, Interp::trilinear);
  EXPECT_EQ(out.dims, (Index3{20, 10, 22}));
  EXPECT_EQ(out.spacing, (Vec3{1.5, 1.5, 1.5}));
  for (float x : out.data) EXPECT_EQ(x, 42.5f);
  ImageVolume thin({1, 1, 1}, {0.1, 0.1, 0.1}, {0, 0, 0}, 1.0f);
  EXPECT_EQ(resample_isotropic(thin, 1.5, Interp::trilinear).dims, (Index3{1, 1, 1}));
}

TEST(Resample, IdempotentOnDims) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_real_distribution<double> sp(0.4, 3.0);
    ImageVolume v({1 + rng() % 30, 1 + rng() % 30, 1 + rng() % 30}, {sp(rng), sp(rng), sp(rng)});
    const auto once = resample_isotropic(v, 1.5, Interp::trilinear);
    const auto twice = resample_isotropic(once, 1.5, Interp::trilinear);
    EXPECT_EQ(once.dims, twice.dims);
  }
}

TEST(Resample, SphereVolumePreserved) {
  const double r = 20.0, h = 0.5;
  const std::size_t n = 90;
  LabelVolume v({n, n, n}, {h, h, h});
  const double c = (static_cast<double>(n) - 1) * h / 2;
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dz = z * h - c, dy = y * h - c, dx = x * h - c;
        v.at(z, y, x) = dz * dz + dy * dy + dx * dx <= r * r ? 1 : 0;
      }
  const auto out = resample_isotropic(v, 1.5, Interp::nearest);
  const double count = static_cast<double>(std::count(out.data.begin(), out.data.end(), 1));
  const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  EXPECT_NEAR(count * out.voxel_volume() / analytic, 1.0, 0.02);
}

TEST(Normalize, WindowToUnitInterval) {
  ImageVolume v({1, 1, 4}, {1, 1, 1});
  v.data = {-500.0f, -200.0f, 150.0f, 900.0f};
  const auto n = normalize_intensity(v, -200.0, 500.0);
  EXPECT_EQ(n.data, (std::vector<float>{0.0f, 0.0f, 0.5f, 1.0f}));
  EXPECT_THROW(normalize_intensity(v, 1.0, 1.0), ConfigError);
}

TEST(CropZ, TwoCropsFor288) {
  Sample s{ImageVolume({288, 4, 4}, {1.5, 1.5, 1.5}), LabelVolume({288, 4, 4}, {1.5, 1.5, 1.5}), "kidney", "c"};
  CropPolicy p;
  p.target = {144, 4, 4};
  const auto crops = crop_z(s, p);
  ASSERT_EQ(crops.size(), 2u);
  EXPECT_EQ(crops[0].window.start[0], 0);
  EXPECT_EQ(crops[1].window.start[0], 144);
}

TEST(CropZ, PadsSmallInPlane) {
  Sample s{ImageVolume({4, 3, 2}, {1, 1, 1}, {0, 0, 0}, 7.0f), LabelVolume({4, 3, 2}, {1, 1, 1}, {0, 0, 0}, 1),
           "kidney", "c"};
  CropPolicy p;
  p.target = {4, 6, 6};
  p.image_pad = -1.0f;
  const auto crops = crop_z(s, p);
  ASSERT_EQ(crops.size(), 1u);
  const auto& img = crops[0].sample.image;
  const auto& msk = crops[0].sample.mask;
  EXPECT_EQ(img.dims, (Index3{4, 6, 6}));
  std::size_t inside = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img.data[i] == 7.0f) {
      ++inside;
      EXPECT_EQ(msk.data[i], 1);
    } else {
      EXPECT_EQ(img.data[i], -1.0f);
      EXPECT_EQ(msk.data[i], 0);
    }
  }
  EXPECT_EQ(inside, 4u * 3 * 2);
}

TEST(CropZ, CoversExtentWithoutGaps) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t z = 1 + rng() % 100, t = 1 + rng() % 40;
    const double overlap = static_cast<double>(rng() % 90) / 100.0;
    Sample s{ImageVolume({z, 2, 2}, {1, 1, 1}), LabelVolume({z, 2, 2}, {1, 1, 1}), "kidney", "c"};
    CropPolicy p;
    p.target = {t, 2, 2};
    p.z_overlap = overlap;
    std::vector<bool> covered(z, false);
    for (const auto& c : crop_z(s, p)) {
      ASSERT_EQ(c.sample.image.dims[0], t);
      for (std::size_t i = 0; i < t; ++i) {
        const auto at = c.window.start[0] + static_cast<std::ptrdiff_t>(i);
        if (at >= 0 && at < static_cast<std::ptrdiff_t>(z)) covered[at] = true;
      }
    }
    EXPECT_TRUE(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
  }
}

TEST(CropZ, CropContentMatchesSource) {
  std::mt19937_64 rng(6);
  Sample s{random_image({20, 5, 5}, {1, 1, 1}, rng), random_labels({20, 5, 5}, {1, 1, 1}, rng), "kidney", "c"};
  s.image.origin = s.mask.origin;
  CropPolicy p;
  p.target = {8, 3, 3};
  for (const auto& c : crop_z(s, p)) {
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
          const std::size_t sz = c.window.start[0] + z, sy = c.window.start[1] + y, sx = c.window.start[2] + x;
          EXPECT_EQ(c.sample.image.at(z, y, x), s.image.at(sz, sy, sx));
          EXPECT_EQ(c.sample.mask.at(z, y, x), s.mask.at(sz, sy, sx));
        }
  }
}

TEST(Augment, DeterministicAndInRange) {
  std::mt19937_64 rng(7);
  Sample s{random_image({6, 10, 10}, {1.5, 1.5, 1.5}, rng), random_labels({6, 10, 10}, {1.5, 1.5, 1.5}, rng),
           "kidney", "c"};
  s.image.origin = s.mask.origin;
  const auto a = augment(s, 99);
  const auto b = augment(s, 99);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = draw_augment_params(seed, {});
    EXPECT_GE(p.rotation_deg, -10.0);
    EXPECT_LE(p.rotation_deg, 10.0);
    EXPECT_GE(p.scale, 0.9);
    EXPECT_LE(p.scale, 1.1);
  }
}

TEST(Augment, IdentityParametersLeaveSampleUnchanged) {
  std::mt19937_64 rng(8);
  Sample s{random_image({5, 7, 9}, {1.5, 1.5, 1.5}, rng), random_labels({5, 7, 9}, {1.5, 1.5, 1.5}, rng),
           "kidney", "c"};
  s.image.origin = s.mask.origin;
  const auto out = augment(s, AugmentParams{0.0, 1.0});
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.mask, s.mask);
}

TEST(Augment, NeverIntroducesNewLabels) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    LabelVolume m({4, 12, 12}, {1.5, 1.5, 1.5});
    const int classes = 1 + static_cast<int>(seed % 3);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = static_cast<std::uint8_t>((i / 7) % classes) * 2;
    Sample s{ImageVolume({4, 12, 12}, {1.5, 1.5, 1.5}), m, "kidney", "c"};
    const auto out = augment(s, seed, {});
    const auto before = label_set(m);
    for (auto l : label_set(out.mask)) EXPECT_TRUE(before.count(l)) << int(l);
  }
}

TEST(Augment, RejectsBadRanges) {
  AugmentRanges r;
  r.scale_min = 1.2;
  r.scale_max = 1.1;
  EXPECT_THROW(draw_augment_params(1, r), ConfigError);
}

TEST(Phantom, SameSeedSamePair) {
  const auto spec = PhantomSpec::for_grid({32, 32, 32}, 1.5, 17);
  const auto a = generate_phantom_pair(spec, "c0");
  const auto b = generate_phantom_pair(spec, "c0");
  EXPECT_EQ(a.kidney.sample.image, b.kidney.sample.image);
  EXPECT_EQ(a.kidney.sample.mask, b.kidney.sample.mask);
  EXPECT_EQ(a.liver.sample.image, b.liver.sample.image);
  EXPECT_EQ(a.liver.sample.mask, b.liver.sample.mask);
  const auto c = generate_phantom_pair(PhantomSpec::for_grid({32, 32, 32}, 1.5, 18), "c0");
  EXPECT_FALSE(c.kidney.sample.image == a.kidney.sample.image);
}

TEST(Phantom, LabelConventionsPerTask) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pair = generate_phantom_pair(PhantomSpec::for_grid({32, 32, 32}, 1.5, seed), "c");
    const auto& k = pair.kidney;
    EXPECT_EQ(label_set(k.sample.mask), (std::set<std::uint8_t>{0, 1, 2}));
    EXPECT_EQ(label_set(pair.liver.sample.mask), (std::set<std::uint8_t>{0, 1}));
    EXPECT_EQ(k.sample.task, "kidney");
    EXPECT_EQ(pair.liver.sample.task, "liver");
    // Kidney components are disjoint and liver tissue is background in the kidney task.
    const auto& m = k.sample.mask;
    std::size_t liver_voxels = 0;
    for (std::size_t z = 0; z < m.dims[0]; ++z)
      for (std::size_t y = 0; y < m.dims[1]; ++y)
        for (std::size_t x = 0; x < m.dims[2]; ++x) {
          const Vec3 p{z * 1.5, y * 1.5, x * 1.5};
          const bool left = k.left_kidney.contains(p), right = k.right_kidney.contains(p);
          EXPECT_FALSE(left && right);
          const auto l = m.at(z, y, x);
          EXPECT_EQ(l == 1, left);
          if (k.liver.contains(p) && !left && !right) {
            ++liver_voxels;
            EXPECT_EQ(l, 0);
          }
        }
    EXPECT_GT(liver_voxels, 0u);
  }
}

TEST(Phantom, AnalyticVolumeAgreesForLargeRadii) {
  PhantomSpec spec = PhantomSpec::for_grid({96, 80, 96}, 1.5, 3);
  spec.lumpiness = 0;
  spec.kidney_radius_z = {25, 30};
  spec.kidney_radius_y = {16, 20};
  spec.kidney_radius_x = {15, 18};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    spec.seed = seed;
    const auto c = generate_phantom_case(spec, "kidney", "c");
    const auto& m = c.sample.mask;
    const double voxels = static_cast<double>(std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v > 0; }));
    EXPECT_NEAR(voxels * m.voxel_volume() / c.analytic_tkv_mm3(), 1.0, 0.03);
  }
}

TEST(Phantom, RadiiExceedingGridIsError) {
  PhantomSpec spec;
  spec.kidney_radius_z = {30, 40};
  EXPECT_THROW(generate_phantom_case(spec, "kidney", "c"), ConfigError);
  EXPECT_THROW(generate_phantom_case(PhantomSpec{}, "spleen", "c"), ConfigError);
  PhantomSpec lumpy;
  lumpy.lumpiness = 0.6;
  EXPECT_THROW(lumpy.validate(), ConfigError);
}

TEST(Phantom, ContactProbabilityControlsContact) {
  PhantomSpec spec;
  spec.contact_probability = 1.0;
  EXPECT_TRUE(generate_phantom_case(spec, "kidney", "c").liver_contacts_kidney);
  spec.contact_probability = 0.0;
  EXPECT_FALSE(generate_phantom_case(spec, "kidney", "c").liver_contacts_kidney);
}

TEST(Folds, ThreeFoldsOf203Cases) {
  std::vector<std::string> ids;
  for (int i = 0; i < 203; ++i) ids.push_back("case" + std::to_string(i));
  const auto plan = plan_folds(ids, 3, 42);
  auto sizes = plan.fold_sizes();
  std::sort(sizes.begin(), sizes.end(), std::greater<>());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{68, 68, 67}));
  std::multiset<std::string> seen;
  for (const auto& f : plan.folds()) seen.insert(f.begin(), f.end());
  EXPECT_EQ(seen, std::multiset<std::string>(ids.begin(), ids.end()));
}

TEST(Folds, PartitionPropertyOverRandomInputs) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 5, n = k + rng() % 40;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i * 7 + trial));
    const auto plan = plan_folds(ids, k, rng());
    const auto sizes = plan.fold_sizes();
    ASSERT_EQ(sizes.size(), k);
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1u);
    std::size_t total = 0;
    const auto folds = plan.folds();
    for (std::size_t f = 0; f < folds.size(); ++f) {
      total += folds[f].size();
      for (const auto& id : folds[f]) EXPECT_EQ(plan.fold_of(id), f);
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(plan.assignment.size(), n);
  }
}

TEST(Folds, SeededAndValidated) {
  std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g"};
  EXPECT_EQ(plan_folds(ids, 3, 5).assignment, plan_folds(ids, 3, 5).assignment);
  EXPECT_THROW(plan_folds({"a", "b"}, 3, 1), ConfigError);
  EXPECT_THROW(plan_folds(ids, 1, 1), ConfigError);
  EXPECT_THROW(plan_folds({"a", "a", "b"}, 2, 1), ConfigError);
  EXPECT_THROW(plan_folds(ids, 3, 5).fold_of("zz"), ConfigError);
}

TEST(Epoch, SmallerSetCycles) {
  const auto pairs = epoch_pairs(4, 2, 3, 0);
  ASSERT_EQ(pairs.size(), 4u);
  std::map<std::size_t, int> a, b;
  for (auto [i, j] : pairs) {
    ++a[i];
    ++b[j];
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i], 1);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(b[j], 2);
}

TEST(Epoch, EqualSetsEachOnce) {
  for (std::size_t n : {1u, 3u, 8u}) {
    const auto pairs = epoch_pairs(n, n, 11, 2);
    std::set<std::size_t> a, b;
    for (auto [i, j] : pairs) {
      a.insert(i);
      b.insert(j);
    }
    EXPECT_EQ(a.size(), n);
    EXPECT_EQ(b.size(), n);
  }
}

TEST(Epoch, DeterministicPerSeedAndEpoch) {
  EXPECT_EQ(epoch_pairs(9, 5, 1, 4), epoch_pairs(9, 5, 1, 4));
  EXPECT_NE(epoch_pairs(9, 5, 1, 4), epoch_pairs(9, 5, 1, 5));
  EXPECT_NE(epoch_pairs(9, 5, 1, 4), epoch_pairs(9, 5, 2, 4));
  EXPECT_THROW(epoch_pairs(0, 5, 1, 0), ConfigError);
  const auto sched = epoch_schedule({3, 5, 1}, 7, 0);
  ASSERT_EQ(sched.size(), 3u);
  for (const auto& s : sched) EXPECT_EQ(s.size(), 5u);
}

TEST(Epoch, ShuffleIsPermutation) {
  for (std::size_t n : {0u, 1u, 2u, 17u}) {
    auto p = shuffled_indices(n, 3);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p[i], i);
  }
  EXPECT_NE(sample_seed(1, "a", 0), sample_seed(1, "b", 0));
  EXPECT_NE(sample_seed(1, "a", 0), sample_seed(1, "a", 1));
  EXPECT_EQ(sample_seed(1, "a", 0), sample_seed(1, "a", 0));
}

TEST(Manifest, RoundTripWithRelativePaths) {
  const auto dir = oracle::scratch_dir("manifest");
  std::vector<ManifestRecord> recs{
      {"c1", dir / "img" / "c1.mha", dir / "msk" / "c1.mha", "kidney", std::nullopt},
      {"c1", dir / "l.mha", {}, "liver", 2},
  };
  write_manifest(recs, dir / "m.jsonl");
  const std::string text = slurp(dir / "m.jsonl");
  EXPECT_NE(text.find("\"image\":\"img/c1.mha\""), std::string::npos) << text;
  EXPECT_EQ(text.find("\"mask\":\"\""), std::string::npos);
  const auto back = read_manifest(dir / "m.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].image, fs::absolute(dir / "img" / "c1.mha").lexically_normal());
  EXPECT_TRUE(back[1].mask.empty());
  EXPECT_EQ(back[1].fold, std::optional<std::size_t>(2));
  EXPECT_EQ(records_for_task(back, "liver").size(), 1u);
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  const auto dir = oracle::scratch_dir("manifest_bad");
  spit(dir / "a.jsonl", "{\"case_id\":\"a\",\"image\":\"x\",\"task\":\"kidney\"}\n\n{not json}\n");
  try {
    read_manifest(dir / "a.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  spit(dir / "b.jsonl",
       "{\"case_id\":\"a\",\"image\":\"x\",\"task\":\"kidney\"}\n{\"case_id\":\"a\",\"image\":\"y\",\"task\":\"kidney\"}\n");
  EXPECT_THROW(read_manifest(dir / "b.jsonl"), ParseError);
  spit(dir / "c.jsonl", "{\"case_id\":\"a\",\"task\":\"kidney\"}\n");
  EXPECT_THROW(read_manifest(dir / "c.jsonl"), ParseError);
  EXPECT_THROW(read_manifest(dir / "none.jsonl"), IoError);
}

TEST(Volume, LabelValidation) {
  LabelVolume m({1, 1, 3}, {1, 1, 1});
  m.data = {0, 1, 2};
  EXPECT_NO_THROW(validate_labels(m, 3));
  EXPECT_THROW(validate_labels(m, 2), ValidationError);
  Sample s{ImageVolume({1, 1, 3}, {1, 1, 1}), LabelVolume({1, 1, 3}, {1, 1, 2}), "kidney", "x"};
  EXPECT_THROW(s.validate(), ShapeError);
  EXPECT_THROW(ImageVolume({0, 1, 1}, {1, 1, 1}), ShapeError);
  EXPECT_THROW(ImageVolume({1, 1, 1}, {1, 0, 1}), ShapeError);
}
