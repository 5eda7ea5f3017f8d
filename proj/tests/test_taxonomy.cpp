#include <gtest/gtest.h>

#include <json.hpp>

#include "covdistill/error.hpp"
#include "covdistill/taxonomy.hpp"

using namespace covdistill;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Config;
}

}  // namespace

TEST(Taxonomy, LetterRowCountsSumTo96) {
  const auto tax = Taxonomy::builtin();
  int total = 0;
  for (const auto& c : tax.categories()) total += c.paper_count;
  EXPECT_EQ(total, 96);
  EXPECT_EQ(tax.categories().size(), 13u);
}

TEST(Taxonomy, GroupsTwoToFiveGive75Slots) {
  const auto tax = Taxonomy::builtin(Taxonomy::kDefaultProfile);
  EXPECT_EQ(tax.label_count(), 75u);
  EXPECT_EQ(tax.description_count({Group::II, Group::III, Group::IV, Group::V}), 75);
}

TEST(Taxonomy, Paper68ProfileDropsSevenSlots) {
  const auto tax = Taxonomy::builtin(Taxonomy::kPaper68Profile);
  EXPECT_EQ(tax.label_count(), 68u);
  EXPECT_THROW(tax.label_index("D-17"), Error);
  EXPECT_EQ(tax.active_groups(), (std::vector<Group>{Group::II, Group::III, Group::IV, Group::V}));
}

TEST(Taxonomy, DuplicateCategoryIdIsValidationError) {
  auto doc = nlohmann::json::parse(builtin_taxonomy_text());
  doc["categories"].push_back(doc["categories"][3]);
  EXPECT_EQ(kind_of([&] { Taxonomy::parse(doc.dump()); }), ErrorKind::Validation);
}

TEST(Taxonomy, LabelIndexOrdering) {
  const auto tax = Taxonomy::builtin();
  EXPECT_EQ(tax.label_index(tax.id_at(0)), 0u);
  EXPECT_EQ(tax.id_at(0), "D-1");
  for (std::size_t k = 0; k < tax.label_count(); ++k) EXPECT_EQ(tax.label_index(tax.id_at(k)), k);
  EXPECT_EQ(kind_of([&] { tax.label_index("A-1"); }), ErrorKind::Lookup);
}

TEST(Taxonomy, GroupOf) {
  const auto tax = Taxonomy::builtin();
  EXPECT_EQ(tax.group_of(tax.label_index("D-3")), Group::II);
  EXPECT_EQ(tax.group_of(tax.label_index("L-2")), Group::V);
  EXPECT_EQ(kind_of([&] { tax.group_of(tax.label_count()); }), ErrorKind::Bounds);
}

TEST(Taxonomy, SerializeRoundTrip) {
  for (const char* profile : {Taxonomy::kDefaultProfile, Taxonomy::kPaper68Profile}) {
    const auto tax = Taxonomy::builtin(profile);
    const auto again = Taxonomy::parse(tax.serialize(), profile);
    EXPECT_EQ(again, tax);
    EXPECT_EQ(again.digest(), tax.digest());
  }
}

TEST(Taxonomy, ProfilesHaveDistinctDigests) {
  EXPECT_NE(Taxonomy::builtin(Taxonomy::kDefaultProfile).digest(),
            Taxonomy::builtin(Taxonomy::kPaper68Profile).digest());
}

TEST(Taxonomy, UnknownProfileIsLookupError) {
  EXPECT_EQ(kind_of([] { Taxonomy::builtin("nope"); }), ErrorKind::Lookup);
}

TEST(Taxonomy, MalformedJsonIsParseError) {
  EXPECT_EQ(kind_of([] { Taxonomy::parse("{\"groups\": ["); }), ErrorKind::Parse);
}

TEST(Taxonomy, RomanNumerals) {
  for (int g = 1; g <= kGroupCount; ++g) {
    const auto group = static_cast<Group>(g);
    EXPECT_EQ(parse_group(group_roman(group)), group);
  }
  EXPECT_FALSE(parse_group("VII").has_value());
}
