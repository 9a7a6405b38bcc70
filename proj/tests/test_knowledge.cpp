#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "kgcbm/knowledge.hpp"
#include "support.hpp"

using namespace kgcbm;
using namespace kgcbm::testing;
using nlohmann::json;

namespace {

ConceptScheme cells() {
  return ConceptScheme({"basophil", "eosinophil", "lymphocyte"},
                       {{"granule_color", {"blue", "red", "none"}},
                        {"nucleus_shape", {"round", "lobed"}},
                        {"cell_size", {"small", "big"}}});
}

json cells_knowledge() {
  return {{"format_version", 1},
          {"classes", {"basophil", "eosinophil", "lymphocyte"}},
          {"concepts", {"granule_color", "nucleus_shape", "cell_size"}},
          {"importance",
           {{"High", "Mid", "Low"}, {"High", "Mid", "Low"}, {"Low", "High", "Mid"}}}};
}

}  // namespace

TEST(Knowledge, LoadsNamedCells) {
  const auto s = cells();
  const auto m = importance_from_json(cells_knowledge(), s);
  EXPECT_EQ(m.at(s.class_index("eosinophil"), s.concept_index("granule_color")), Importance::High);
  EXPECT_EQ(m.at(2, 0), Importance::Low);
  EXPECT_EQ(m.at(2, 2), Importance::Mid);
}

TEST(Knowledge, ColumnAndRowOrderFollowTheScheme) {
  auto j = cells_knowledge();
  j["concepts"] = {"cell_size", "granule_color", "nucleus_shape"};
  j["importance"] = {{"Low", "High", "Mid"}, {"Low", "High", "Mid"}, {"Mid", "Low", "High"}};
  EXPECT_EQ(importance_from_json(j, cells()), importance_from_json(cells_knowledge(), cells()));
}

TEST(Knowledge, AllMidHasNoPairs) {
  const auto m = ImportanceMatrix::filled(3, 3, Importance::Mid);
  EXPECT_TRUE(pairs(m, Importance::High).empty());
  EXPECT_TRUE(pairs(m, Importance::Low).empty());
  EXPECT_EQ(pairs(m, Importance::Mid).size(), 9u);
}

TEST(Knowledge, PairsAreRowMajor) {
  const auto m = importance_from_json(cells_knowledge(), cells());
  const std::vector<Cell> high{{0, 0}, {1, 0}, {2, 1}};
  EXPECT_EQ(pairs(m, Importance::High), high);
  const std::vector<Cell> low{{0, 2}, {1, 2}, {2, 0}};
  EXPECT_EQ(pairs(m, Importance::Low), low);
}

TEST(Knowledge, FileRoundTrip) {
  const auto s = cells();
  const auto m = importance_from_json(cells_knowledge(), s);
  const auto path = scratch_dir("knowledge") + "/k.json";
  save_importance(path, m, s);
  EXPECT_EQ(load_importance(path, s), m);
}

TEST(Knowledge, RandomizeKeepsRowCountsAndIsSeeded) {
  const auto m = importance_from_json(cells_knowledge(), cells());
  const auto a = randomize_importance(m, 7);
  EXPECT_EQ(a, randomize_importance(m, 7));
  for (std::size_t k = 0; k < 3; ++k) {
    for (auto level : {Importance::High, Importance::Mid, Importance::Low}) {
      int before = 0, after = 0;
      for (std::size_t l = 0; l < 3; ++l) {
        before += m.at(k, l) == level;
        after += a.at(k, l) == level;
      }
      EXPECT_EQ(before, after);
    }
  }
  bool any_differs = false;
  for (std::uint64_t seed = 0; seed < 20 && !any_differs; ++seed) any_differs = randomize_importance(m, seed) != m;
  EXPECT_TRUE(any_differs);
}

TEST(Knowledge, ParseErrors) {
  const auto s = cells();
  auto bad = cells_knowledge();
  bad["importance"][0][0] = "Highish";
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  bad = cells_knowledge();
  bad["importance"][1] = {"High", "Mid"};
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  bad = cells_knowledge();
  bad["concepts"][2] = "shape_of_cytoplasm";
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  bad = cells_knowledge();
  bad["classes"][2] = "basophil";
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  bad = cells_knowledge();
  bad["format_version"] = 2;
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  bad = cells_knowledge();
  bad.erase("importance");
  EXPECT_THROW(importance_from_json(bad, s), ParseError);

  EXPECT_THROW(load_importance("/nonexistent/k.json", s), ParseError);
}

TEST(Knowledge, DimensionMismatchAgainstScheme) {
  const auto m = ImportanceMatrix::filled(2, 3, Importance::Mid);
  EXPECT_THROW(m.check_matches(cells()), ConfigError);
  EXPECT_THROW(ImportanceMatrix(2, 2, {Importance::High}), ConfigError);
}

TEST(Knowledge, ShippedConfigsParse) {
  const std::string root = KGCBM_SOURCE_DIR;
  for (const std::string dir : {"configs/wbc", "configs/skin"}) {
    const auto s = load_scheme(root + "/" + dir + "/scheme.json");
    const auto m = load_importance(root + "/" + dir + "/knowledge.json", s);
    EXPECT_EQ(m.num_classes(), s.num_classes()) << dir;
  }
}
