#include "iterchat/prompts.h"

#include <filesystem>

#include "iterchat/error.h"
#include "iterchat/io.h"
#include "iterchat/text.h"

namespace iterchat {
namespace detail {
const std::map<std::string, std::string_view>& builtin_prompt_files();
}  // namespace detail

namespace {

struct Field {
  const char* file;
  std::string PromptTemplates::*member;
};

constexpr Field kFields[] = {
    {"iterchat_system.txt", &PromptTemplates::iterchat_system},
    {"multi_turn_system.txt", &PromptTemplates::multi_turn_system},
    {"realize_system.txt", &PromptTemplates::realize_system},
    {"realize_user.txt", &PromptTemplates::realize_user},
    {"draft_system.txt", &PromptTemplates::draft_system},
    {"draft_user.txt", &PromptTemplates::draft_user},
    {"draft_values_user.txt", &PromptTemplates::draft_values_user},
};

}  // namespace

PromptTemplates PromptTemplates::builtin() {
  const auto& files = detail::builtin_prompt_files();
  PromptTemplates out;
  for (const Field& f : kFields) {
    auto it = files.find(f.file);
    if (it == files.end()) throw Error(std::string("built-in prompt missing: ") + f.file);
    out.*f.member = std::string(it->second);
  }
  auto version = files.find("VERSION");
  out.version = version == files.end() ? "unversioned" : trim(version->second);
  return out;
}

PromptTemplates PromptTemplates::load(const std::string& directory) {
  if (!std::filesystem::is_directory(directory)) {
    throw Error("prompt directory not found: " + directory);
  }
  PromptTemplates out = builtin();
  const std::filesystem::path dir(directory);
  for (const Field& f : kFields) {
    const auto path = dir / f.file;
    if (std::filesystem::exists(path)) out.*f.member = read_file(path.string());
  }
  if (std::filesystem::exists(dir / "VERSION")) out.version = trim(read_file((dir / "VERSION").string()));
  return out;
}

std::string render_template(std::string_view text,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find("{{", pos);
    if (open == std::string_view::npos) break;
    const std::size_t close = text.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(text.substr(pos, open - pos));
    const std::string key(text.substr(open + 2, close - open - 2));
    if (auto it = values.find(key); it != values.end()) {
      out.append(it->second);
    } else {
      out.append(text.substr(open, close + 2 - open));
    }
    pos = close + 2;
  }
  out.append(text.substr(pos));
  return out;
}

}  // namespace iterchat
