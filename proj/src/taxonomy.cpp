#include "covdistill/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "covdistill/digest.hpp"
#include "covdistill/error.hpp"

namespace covdistill {

using nlohmann::json;

namespace {
constexpr const char* kRoman[] = {"", "I", "II", "III", "IV", "V", "VI"};
}

const char* group_roman(Group g) { return kRoman[static_cast<int>(g)]; }

std::optional<Group> parse_group(const std::string& roman) {
  for (int i = 1; i <= kGroupCount; ++i) {
    if (roman == kRoman[i]) return static_cast<Group>(i);
  }
  return std::nullopt;
}

namespace {

Group require_group(const json& j, const std::string& where) {
  if (!j.is_string()) throw Error(ErrorKind::Parse, where + ": group must be a string");
  auto g = parse_group(j.get<std::string>());
  if (!g) throw Error(ErrorKind::Parse, where + ": unknown group '" + j.get<std::string>() + "'");
  return *g;
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw Error(ErrorKind::Parse, where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

Taxonomy Taxonomy::builtin(const std::string& profile) { return parse(builtin_taxonomy_text(), profile); }

Taxonomy Taxonomy::load(const std::filesystem::path& path, const std::string& profile) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open taxonomy file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), profile);
}

Taxonomy Taxonomy::parse(const std::string& text, const std::string& profile) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports "line L, column C" in the message.
    throw Error(ErrorKind::Parse, std::string("taxonomy: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::Parse, "taxonomy: top level must be an object");

  Taxonomy tax;
  std::set<Group> seen_groups;
  for (const auto& g : doc.value("groups", json::array())) {
    const std::string where = "taxonomy group";
    GroupInfo info{require_group(g.at("id"), where), field<std::string>(g, "name", where),
                   g.value("short", std::string())};
    if (info.short_name.empty()) info.short_name = info.name;
    if (!seen_groups.insert(info.id).second) {
      throw Error(ErrorKind::Validation, "taxonomy: duplicate group '" +
                                             std::string(group_roman(info.id)) + "'");
    }
    tax.groups_.push_back(std::move(info));
  }

  std::set<std::string> ids;
  const json cats = doc.value("categories", json::array());
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "taxonomy category #" + std::to_string(i);
    const json& c = cats[i];
    ConflictCategory cat;
    cat.id = field<std::string>(c, "id", where);
    cat.group = require_group(c.at("group"), where);
    const auto letter = field<std::string>(c, "letter", where);
    if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'Z') {
      throw Error(ErrorKind::Parse, where + ": letter must be a single capital letter");
    }
    cat.letter = letter[0];
    cat.description = field<std::string>(c, "description", where);
    cat.paper_count = field<int>(c, "count", where);
    if (cat.paper_count < 1) throw Error(ErrorKind::Validation, where + ": count must be >= 1");
    if (!ids.insert(cat.id).second) {
      throw Error(ErrorKind::Validation, "taxonomy: duplicate category id '" + cat.id + "'");
    }
    if (!seen_groups.count(cat.group)) {
      tax.groups_.push_back({cat.group, group_roman(cat.group), group_roman(cat.group)});
      seen_groups.insert(cat.group);
    }
    tax.categories_.push_back(std::move(cat));
  }

  for (const auto& p : doc.value("profiles", json::array())) {
    TaxonomyProfile prof;
    prof.name = field<std::string>(p, "name", "taxonomy profile");
    for (const auto& g : p.value("groups", json::array())) {
      prof.groups.push_back(require_group(g, "taxonomy profile " + prof.name));
    }
    prof.inactive = p.value("inactive", std::vector<std::string>{});
    tax.profiles_.push_back(std::move(prof));
  }
  tax.default_profile_ = doc.value("default_profile", std::string());
  if (tax.profiles_.empty()) {
    // Without profiles every category is active.
    TaxonomyProfile all{"all", {}, {}};
    for (const auto& g : tax.groups_) all.groups.push_back(g.id);
    tax.profiles_.push_back(all);
  }
  if (tax.default_profile_.empty()) tax.default_profile_ = tax.profiles_.front().name;

  tax.select_profile(profile.empty() ? doc.value("active_profile", tax.default_profile_) : profile);
  return tax;
}

void Taxonomy::select_profile(const std::string& name) {
  auto it = std::find_if(profiles_.begin(), profiles_.end(),
                         [&](const TaxonomyProfile& p) { return p.name == name; });
  if (it == profiles_.end()) throw Error(ErrorKind::Lookup, "taxonomy profile '" + name + "' not found");
  profile_ = name;

  std::set<std::string> inactive(it->inactive.begin(), it->inactive.end());
  std::set<std::string> all_slots;
  slots_.clear();
  slot_index_.clear();
  for (std::size_t ci = 0; ci < categories_.size(); ++ci) {
    const auto& cat = categories_[ci];
    for (int k = 1; k <= cat.paper_count; ++k) {
      std::string id = std::string(1, cat.letter) + "-" + std::to_string(k);
      if (!all_slots.insert(id).second) {
        throw Error(ErrorKind::Validation, "taxonomy: label slot '" + id + "' produced twice");
      }
      const bool in_group = std::find(it->groups.begin(), it->groups.end(), cat.group) != it->groups.end();
      if (!in_group || inactive.count(id)) continue;
      slot_index_[id] = slots_.size();
      slots_.push_back({std::move(id), ci, k});
    }
  }
  for (const auto& id : inactive) {
    if (!all_slots.count(id)) {
      throw Error(ErrorKind::Validation, "taxonomy profile '" + name + "': inactive id '" + id +
                                             "' names no description");
    }
  }
  if (slots_.empty()) throw Error(ErrorKind::Validation, "taxonomy profile '" + name + "' has no labels");
}

std::string Taxonomy::serialize() const {
  json doc;
  doc["format"] = "conflict-taxonomy";
  doc["version"] = 1;
  doc["groups"] = json::array();
  for (const auto& g : groups_) {
    doc["groups"].push_back({{"id", group_roman(g.id)}, {"name", g.name}, {"short", g.short_name}});
  }
  doc["categories"] = json::array();
  for (const auto& c : categories_) {
    doc["categories"].push_back({{"id", c.id},
                                 {"group", group_roman(c.group)},
                                 {"letter", std::string(1, c.letter)},
                                 {"description", c.description},
                                 {"count", c.paper_count}});
  }
  doc["profiles"] = json::array();
  for (const auto& p : profiles_) {
    json groups = json::array();
    for (Group g : p.groups) groups.push_back(group_roman(g));
    doc["profiles"].push_back({{"name", p.name}, {"groups", groups}, {"inactive", p.inactive}});
  }
  doc["default_profile"] = default_profile_;
  doc["active_profile"] = profile_;
  return doc.dump(2);
}

std::uint64_t Taxonomy::digest() const {
  std::string s = profile_;
  for (const auto& slot : slots_) {
    s += '|';
    s += slot.id;
    s += ':';
    s += group_roman(categories_[slot.category].group);
  }
  return fnv1a64(s);
}

std::size_t Taxonomy::label_index(const std::string& id) const {
  auto it = slot_index_.find(id);
  if (it == slot_index_.end()) throw Error(ErrorKind::Lookup, "label '" + id + "' is not active");
  return it->second;
}

const std::string& Taxonomy::id_at(std::size_t index) const {
  if (index >= slots_.size()) {
    throw Error(ErrorKind::Bounds, "label index " + std::to_string(index) + " >= " +
                                       std::to_string(slots_.size()));
  }
  return slots_[index].id;
}

Group Taxonomy::group_of(std::size_t index) const {
  if (index >= slots_.size()) {
    throw Error(ErrorKind::Bounds, "label index " + std::to_string(index) + " >= " +
                                       std::to_string(slots_.size()));
  }
  return categories_[slots_[index].category].group;
}

const GroupInfo& Taxonomy::group_info(Group g) const {
  for (const auto& gi : groups_) {
    if (gi.id == g) return gi;
  }
  throw Error(ErrorKind::Lookup, std::string("group ") + group_roman(g) + " not in taxonomy");
}

std::vector<Group> Taxonomy::active_groups() const {
  std::set<Group> gs;
  for (std::size_t i = 0; i < slots_.size(); ++i) gs.insert(group_of(i));
  return {gs.begin(), gs.end()};
}

int Taxonomy::description_count(const std::vector<Group>& groups) const {
  int total = 0;
  for (const auto& c : categories_) {
    if (std::find(groups.begin(), groups.end(), c.group) != groups.end()) total += c.paper_count;
  }
  return total;
}

}  // namespace covdistill
