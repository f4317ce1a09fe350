#include "dan/schema.hpp"

#include <map>
#include <set>

#include <json.hpp>

#include "dan/error.hpp"

namespace dan {

const char* GroupName(AttributeGroup group) {
  switch (group) {
    case AttributeGroup::kColor: return "color";
    case AttributeGroup::kShape: return "shape";
    case AttributeGroup::kPattern: return "pattern";
    case AttributeGroup::kTexture: return "texture";
  }
  return "?";
}

AttributeGroup ParseGroup(const std::string& name) {
  for (auto g : kAllGroups) {
    if (name == GroupName(g)) return g;
  }
  Fail(ErrorKind::kConfig, "unknown attribute group '" + name + "'");
}

const char* LabelSchemeName(LabelScheme scheme) {
  return scheme == LabelScheme::kTernary ? "ternary" : "binary";
}

LabelScheme ParseLabelScheme(const std::string& name) {
  if (name == "ternary") return LabelScheme::kTernary;
  if (name == "binary") return LabelScheme::kBinary;
  Fail(ErrorKind::kConfig, "unknown label scheme '" + name + "'");
}

int AttributeSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> AttributeSchema::group_indices(AttributeGroup group) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].group == group) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<std::string> AttributeSchema::names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.name);
  return out;
}

void AttributeSchema::Validate() const {
  std::set<std::string> seen;
  for (const auto& c : classes) {
    Require(!c.name.empty(), ErrorKind::kConfig, "empty attribute class name");
    Require(seen.insert(c.name).second, ErrorKind::kConfig, "duplicate attribute class '" + c.name + "'");
  }
}

AttributeGroup DefaultGroupFor(const std::string& name) {
  static const std::map<std::string, AttributeGroup> known = {
      {"black", AttributeGroup::kColor},       {"blue", AttributeGroup::kColor},
      {"brown", AttributeGroup::kColor},       {"gray", AttributeGroup::kColor},
      {"green", AttributeGroup::kColor},       {"orange", AttributeGroup::kColor},
      {"pink", AttributeGroup::kColor},        {"red", AttributeGroup::kColor},
      {"violet", AttributeGroup::kColor},      {"white", AttributeGroup::kColor},
      {"yellow", AttributeGroup::kColor},      {"long", AttributeGroup::kShape},
      {"round", AttributeGroup::kShape},       {"rectangular", AttributeGroup::kShape},
      {"rectangle", AttributeGroup::kShape},   {"square", AttributeGroup::kShape},
      {"spotted", AttributeGroup::kPattern},   {"striped", AttributeGroup::kPattern},
      {"furry", AttributeGroup::kTexture},     {"smooth", AttributeGroup::kTexture},
      {"rough", AttributeGroup::kTexture},     {"shiny", AttributeGroup::kTexture},
      {"metallic", AttributeGroup::kTexture},  {"metal", AttributeGroup::kTexture},
      {"vegetation", AttributeGroup::kTexture}, {"wooden", AttributeGroup::kTexture},
      {"wood", AttributeGroup::kTexture},      {"wet", AttributeGroup::kTexture},
  };
  auto it = known.find(name);
  Require(it != known.end(), ErrorKind::kConfig,
          "attribute '" + name + "' has no known group; supply a schema sidecar");
  return it->second;
}

std::string SchemaToJson(const AttributeSchema& schema) {
  nlohmann::ordered_json j;
  j["label_scheme"] = LabelSchemeName(schema.label_scheme);
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (auto g : kAllGroups) {
    nlohmann::ordered_json names = nlohmann::ordered_json::array();
    for (const auto& c : schema.classes) {
      if (c.group == g) names.push_back(c.name);
    }
    groups.push_back({{"group", GroupName(g)}, {"classes", names}});
  }
  j["groups"] = groups;
  j["classes"] = schema.names();
  return j.dump(2) + "\n";
}

AttributeSchema SchemaFromJson(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kMalformedInput, std::string("schema JSON: ") + e.what());
  }
  try {
    AttributeSchema schema;
    if (j.contains("label_scheme")) schema.label_scheme = ParseLabelScheme(j.at("label_scheme").get<std::string>());
    std::map<std::string, AttributeGroup> group_of;
    for (const auto& g : j.at("groups")) {
      const AttributeGroup group = ParseGroup(g.at("group").get<std::string>());
      for (const auto& name : g.at("classes")) {
        Require(group_of.emplace(name.get<std::string>(), group).second, ErrorKind::kConfig,
                "class '" + name.get<std::string>() + "' listed in two groups");
      }
    }
    // Class order comes from "classes" when present, else group order.
    std::vector<std::string> order;
    if (j.contains("classes")) {
      order = j.at("classes").get<std::vector<std::string>>();
    } else {
      for (const auto& g : j.at("groups")) {
        for (const auto& name : g.at("classes")) order.push_back(name.get<std::string>());
      }
    }
    Require(order.size() == group_of.size(), ErrorKind::kConfig, "schema class list and groups disagree");
    for (const auto& name : order) {
      auto it = group_of.find(name);
      Require(it != group_of.end(), ErrorKind::kConfig, "class '" + name + "' has no group");
      schema.classes.push_back({name, it->second});
    }
    schema.Validate();
    return schema;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kMalformedInput, std::string("schema JSON: ") + e.what());
  }
}

}  // namespace dan
