#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "parld/provider.hpp"

namespace parld {

enum class TemplateId {
    Previewer,
    Analyzer,
    Reasoner,
    Reflector,
    TutorInstructionParld,
    TutorInstructionDa,
    TutorDirectRespond,
    SimulatedStudent,
    CorrectnessJudge,
    KcTagger,
};

std::string to_string(TemplateId id);
std::optional<TemplateId> template_id_from_string(std::string_view text);

// Slots use {{name}} markers. Rendering with all required slots bound leaves
// no residual markers.
struct PromptTemplate {
    TemplateId id = TemplateId::Previewer;
    std::string version;
    std::string system_text;
    std::string user_text;
    std::vector<std::string> required_slots;
};

using SlotMap = std::map<std::string, std::string>;

class PromptRegistry {
public:
    // Compiled-in default templates.
    static const PromptRegistry& builtin();

    // Loads `*.prompt` asset files (front-matter header + <<<SYSTEM>>> /
    // <<<USER>>> sections). Ids present in the directory override builtins.
    static PromptRegistry load_dir(const std::filesystem::path& dir);

    const PromptTemplate& get(TemplateId id) const;
    std::vector<ChatMessage> render(TemplateId id, const SlotMap& slots) const;
    std::map<std::string, std::string> versions() const;  // template id -> version

private:
    friend PromptRegistry make_builtin_registry();
    void put(PromptTemplate t);

    std::map<TemplateId, PromptTemplate> templates_;
};

PromptTemplate parse_prompt_asset(const std::string& content, const std::string& origin);

}  // namespace parld
