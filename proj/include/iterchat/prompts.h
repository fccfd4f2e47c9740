#pragma once

#include <map>
#include <string>
#include <string_view>

namespace iterchat {

// Prompt texts live in the repository's prompts/ directory as plain files
// and are compiled in as the defaults; a directory given at run time
// replaces any of them. Placeholders are written {{name}}.
struct PromptTemplates {
  std::string version;
  std::string iterchat_system;
  std::string multi_turn_system;
  std::string realize_system;
  std::string realize_user;
  std::string draft_system;
  std::string draft_user;
  std::string draft_values_user;

  static PromptTemplates builtin();
  // Files missing from `directory` keep their built-in text.
  static PromptTemplates load(const std::string& directory);
};

// Replaces every {{key}}. Unknown placeholders are left as they are.
std::string render_template(std::string_view text,
                            const std::map<std::string, std::string>& values);

}  // namespace iterchat
