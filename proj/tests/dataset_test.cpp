#include <gtest/gtest.h>

#include <random>

#include "lesion/dataset.hpp"
#include "test_support.hpp"

namespace lesion {
namespace {

using testing::TempDir;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::IoError;
}

TEST(ParseGroundTruth, SingleRecordBenignMelanocytic) {
  const auto recs = parse_ground_truth("image_id,malignant,nonmelanocytic\nISIC_0000000,0,0");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0], (GroundTruthRecord{"ISIC_0000000", 0, 0}));
}

TEST(ParseGroundTruth, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(parse_ground_truth("image_id,malignant,nonmelanocytic\n").empty());
  EXPECT_TRUE(parse_ground_truth("image_id,malignant,nonmelanocytic").empty());
}

TEST(ParseGroundTruth, LabelOutOfDomainReportsLine) {
  try {
    parse_ground_truth("image_id,malignant,nonmelanocytic\nISIC_0000001,2,0");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfDomain);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ParseGroundTruth, AcceptsFloatLabelsAndCrlf) {
  const auto recs = parse_ground_truth("image_id,malignant,nonmelanocytic\r\na,1.0,0.0\r\nb,0,1\r\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0], (GroundTruthRecord{"a", 1, 0}));
  EXPECT_EQ(recs[1], (GroundTruthRecord{"b", 0, 1}));
}

TEST(ParseGroundTruth, NeverRoundsOtherNumbers) {
  for (const char* tok : {"0.5", "1.00", "01", "-0", "true", " 1", ""}) {
    EXPECT_EQ(code_of([&] { parse_ground_truth(std::string("image_id,malignant,nonmelanocytic\na,") + tok + ",0"); }),
              ErrorCode::LabelOutOfDomain)
        << tok;
  }
}

TEST(ParseGroundTruth, StructuralErrors) {
  EXPECT_EQ(code_of([] { parse_ground_truth(""); }), ErrorCode::MissingHeader);
  EXPECT_EQ(code_of([] { parse_ground_truth("a,0,0\n"); }), ErrorCode::MissingHeader);
  EXPECT_EQ(code_of([] { parse_ground_truth("image_id,malignant,nonmelanocytic\na,0\n"); }), ErrorCode::RaggedRow);
  EXPECT_EQ(code_of([] { parse_ground_truth("image_id,malignant,nonmelanocytic\na,0,0,1\n"); }), ErrorCode::RaggedRow);
  EXPECT_EQ(code_of([] { parse_ground_truth("image_id,malignant,nonmelanocytic\na,0,0\nb,1,1\na,1,0\n"); }),
            ErrorCode::DuplicateImageId);
  EXPECT_EQ(code_of([] { parse_ground_truth("image_id,malignant,nonmelanocytic\ndir/a,0,0\n"); }),
            ErrorCode::InvalidImageId);
}

TEST(ParseGroundTruth, ChallengeHeaderMapsColumns) {
  const std::string csv = "image_id,melanoma,seborrheic_keratosis\nISIC_1,1.0,0.0\nISIC_2,0.0,1.0\n";
  const auto recs = parse_ground_truth(csv, GroundTruthSchema::isic2017);
  EXPECT_EQ(recs[0], (GroundTruthRecord{"ISIC_1", 1, 0}));
  EXPECT_EQ(recs[1], (GroundTruthRecord{"ISIC_2", 0, 1}));
  EXPECT_EQ(code_of([&] { parse_ground_truth(csv); }), ErrorCode::MissingHeader);
}

TEST(ParseGroundTruth, SerializeRoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GroundTruthRecord> recs;
    const auto n = rng() % 40;
    for (std::size_t i = 0; i < n; ++i) {
      recs.push_back({"ISIC_" + std::to_string(trial) + "_" + std::to_string(i), static_cast<int>(rng() % 2),
                      static_cast<int>(rng() % 2)});
    }
    EXPECT_EQ(parse_ground_truth(serialize_ground_truth(recs)), recs);
  }
}

std::vector<GroundTruthRecord> make_records(std::size_t n) {
  std::vector<GroundTruthRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "ISIC_%07zu", i);
    recs.push_back({id, static_cast<int>(i % 3 == 0), static_cast<int>(i % 5 == 0)});
  }
  return recs;
}

TEST(LoadSplit, PairsEveryRecordInOrder) {
  TempDir dir;
  auto recs = make_records(150);
  std::reverse(recs.begin(), recs.end());
  for (const auto& r : recs) testing::write_file(dir / (r.image_id + ".jpg"), "x");
  const auto ds = load_split(dir.path(), recs, SplitName::validation);
  EXPECT_EQ(ds.size(), 150u);
  EXPECT_EQ(ds.split(), SplitName::validation);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(ds.examples()[i].record, recs[i]);
}

TEST(LoadSplit, TwoThousandRecords) {
  TempDir dir;
  const auto recs = make_records(2000);
  for (const auto& r : recs) testing::write_file(dir / (r.image_id + ".jpg"), "x");
  EXPECT_EQ(load_split(dir.path(), recs, SplitName::train).size(), 2000u);
}

TEST(LoadSplit, ExtensionsAreCaseInsensitive) {
  TempDir dir;
  testing::write_file(dir / "a.JPG", "x");
  testing::write_file(dir / "b.jpeg", "x");
  testing::write_file(dir / "c.Png", "x");
  testing::write_file(dir / "d.txt", "x");
  const std::vector<GroundTruthRecord> recs = {{"a", 0, 0}, {"b", 0, 0}, {"c", 0, 0}};
  const auto ds = load_split(dir.path(), recs, SplitName::train);
  EXPECT_EQ(ds.examples()[0].image_path.filename(), "a.JPG");
  EXPECT_EQ(ds.examples()[2].image_path.filename(), "c.Png");
}

TEST(LoadSplit, MissingFileNamesTheAbsentId) {
  TempDir dir;
  const auto recs = make_records(3);
  testing::write_file(dir / (recs[0].image_id + ".jpg"), "x");
  testing::write_file(dir / (recs[2].image_id + ".png"), "x");
  try {
    load_split(dir.path(), recs, SplitName::train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingImageFile);
    EXPECT_NE(std::string(e.what()).find(recs[1].image_id), std::string::npos);
  }
  std::vector<std::string> dropped;
  const auto ds = load_split(dir.path(), recs, SplitName::train, true, &dropped);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(dropped, std::vector<std::string>{recs[1].image_id});
}

TEST(LoadSplit, EmptyDataset) {
  TempDir dir;
  EXPECT_EQ(code_of([&] { load_split(dir.path(), {}, SplitName::train); }), ErrorCode::EmptyDataset);
  EXPECT_EQ(code_of([&] { scan_image_dir(dir.path()); }), ErrorCode::EmptyDataset);
}

TEST(DatasetSummary, CountsAndBalance) {
  TempDir dir;
  std::vector<GroundTruthRecord> recs = {{"a", 1, 0}, {"b", 0, 0}, {"c", 1, 1}, {"d", 1, 0}};
  for (const auto& r : recs) testing::write_file(dir / (r.image_id + ".png"), "x");
  const auto s = dataset_summary(load_split(dir.path(), recs, SplitName::test));
  EXPECT_EQ(s.count, 4u);
  EXPECT_EQ(s.positives[0], 3u);
  EXPECT_EQ(s.positives[1], 1u);
  EXPECT_DOUBLE_EQ(*s.balance[0], 0.75);
  EXPECT_DOUBLE_EQ(*s.balance[1], 0.25);
}

TEST(DatasetSummary, SixHundredAllNegative) {
  std::vector<Example> ex;
  for (const auto& r : make_records(600)) ex.push_back({r.image_id, "unused", {r.image_id, 0, 0}});
  const auto s = dataset_summary(Dataset(SplitName::test, ex));
  EXPECT_EQ(s.count, 600u);
  EXPECT_EQ(s.positives, (std::array<std::size_t, 2>{0, 0}));
}

TEST(DatasetSummary, EmptyHasNoBalance) {
  const auto s = dataset_summary(Dataset(SplitName::train, {}));
  EXPECT_EQ(s.count, 0u);
  EXPECT_FALSE(s.balance[0].has_value());
  EXPECT_FALSE(s.balance[1].has_value());
}

TEST(DatasetSummary, PositivesEqualLabelSums) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Example> ex;
    std::array<std::size_t, 2> sums{};
    const auto n = rng() % 100;
    for (std::size_t i = 0; i < n; ++i) {
      GroundTruthRecord r{"id" + std::to_string(i), static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)};
      sums[0] += r.malignant;
      sums[1] += r.nonmelanocytic;
      ex.push_back({r.image_id, "unused", r});
    }
    EXPECT_EQ(dataset_summary(Dataset(SplitName::train, ex)).positives, sums);
  }
}

}  // namespace
}  // namespace lesion
