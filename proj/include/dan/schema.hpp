#pragma once

#include <array>
#include <string>
#include <vector>

namespace dan {

enum class AttributeGroup { kColor, kShape, kPattern, kTexture };

inline constexpr std::array<AttributeGroup, 4> kAllGroups = {AttributeGroup::kColor, AttributeGroup::kShape,
                                                             AttributeGroup::kPattern, AttributeGroup::kTexture};

const char* GroupName(AttributeGroup group);
AttributeGroup ParseGroup(const std::string& name);

struct AttributeClass {
  std::string name;
  AttributeGroup group = AttributeGroup::kColor;
  bool operator==(const AttributeClass&) const = default;
};

// How raw manifest labels are encoded: {-1,0,+1} with 0 ambiguous, or {0,1}.
enum class LabelScheme { kTernary, kBinary };

const char* LabelSchemeName(LabelScheme scheme);
LabelScheme ParseLabelScheme(const std::string& name);

struct AttributeSchema {
  std::vector<AttributeClass> classes;
  LabelScheme label_scheme = LabelScheme::kTernary;

  std::size_t size() const { return classes.size(); }
  int index_of(const std::string& name) const;  // -1 when absent
  std::vector<int> group_indices(AttributeGroup group) const;
  std::vector<std::string> names() const;
  // Unique names; each class in exactly one group.
  void Validate() const;
  bool operator==(const AttributeSchema&) const = default;
};

// Group for a well-known attribute name, used when a manifest comes without
// a schema sidecar. Fails with kConfig for unknown names.
AttributeGroup DefaultGroupFor(const std::string& name);

std::string SchemaToJson(const AttributeSchema& schema);
AttributeSchema SchemaFromJson(const std::string& text);

}  // namespace dan
