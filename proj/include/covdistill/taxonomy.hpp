#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace covdistill {

/// Crash-typology groups I..VI.
enum class Group : int { I = 1, II, III, IV, V, VI };

inline constexpr int kGroupCount = 6;

const char* group_roman(Group g);
std::optional<Group> parse_group(const std::string& roman);

struct GroupInfo {
  Group id;
  std::string name;
  std::string short_name;
  bool operator==(const GroupInfo&) const = default;
};

/// One letter row of the typology.
struct ConflictCategory {
  std::string id;
  Group group;
  char letter;
  std::string description;
  int paper_count;  // conflict descriptions under this letter
  bool operator==(const ConflictCategory&) const = default;
};

/// An active profile selects label slots: every description of every
/// category in `groups`, minus the `inactive` slot ids.
struct TaxonomyProfile {
  std::string name;
  std::vector<Group> groups;
  std::vector<std::string> inactive;
  bool operator==(const TaxonomyProfile&) const = default;
};

/// One binary position of the label vector: description `ordinal` (1-based)
/// of a category, named "<letter>-<ordinal>".
struct LabelSlot {
  std::string id;
  std::size_t category;  // index into categories()
  int ordinal;
  bool operator==(const LabelSlot&) const = default;
};

/// Immutable after construction.
///
/// File format (JSON, UTF-8): `groups` [{id, name, short}], `categories`
/// [{id, group, letter, description, count}], `profiles` [{name, groups,
/// inactive}], `default_profile`. Label order is category order, then
/// ordinal.
class Taxonomy {
 public:
  static constexpr const char* kDefaultProfile = "table1-groups2to5";
  static constexpr const char* kPaper68Profile = "paper-68";

  /// Bundled crash typology. Empty profile selects the file's default.
  static Taxonomy builtin(const std::string& profile = "");
  static Taxonomy load(const std::filesystem::path& path, const std::string& profile = "");
  static Taxonomy parse(const std::string& text, const std::string& profile = "");

  std::string serialize() const;
  std::uint64_t digest() const;

  const std::vector<GroupInfo>& groups() const { return groups_; }
  const std::vector<ConflictCategory>& categories() const { return categories_; }
  const std::vector<TaxonomyProfile>& profiles() const { return profiles_; }
  const std::string& profile_name() const { return profile_; }
  const std::vector<LabelSlot>& labels() const { return slots_; }
  std::size_t label_count() const { return slots_.size(); }

  std::size_t label_index(const std::string& id) const;
  const std::string& id_at(std::size_t index) const;
  Group group_of(std::size_t index) const;
  const GroupInfo& group_info(Group g) const;
  /// Groups owning at least one active label, in ascending order.
  std::vector<Group> active_groups() const;
  /// Sum of paper_count over categories in the given groups.
  int description_count(const std::vector<Group>& groups) const;

  bool operator==(const Taxonomy& o) const {
    return groups_ == o.groups_ && categories_ == o.categories_ && profiles_ == o.profiles_ &&
           default_profile_ == o.default_profile_ && profile_ == o.profile_;
  }

 private:
  void select_profile(const std::string& name);

  std::vector<GroupInfo> groups_;
  std::vector<ConflictCategory> categories_;
  std::vector<TaxonomyProfile> profiles_;
  std::string default_profile_;
  std::string profile_;
  std::vector<LabelSlot> slots_;
  std::map<std::string, std::size_t> slot_index_;
};

/// Text of the bundled taxonomy file.
const std::string& builtin_taxonomy_text();

}  // namespace covdistill
