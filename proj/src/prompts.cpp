#include "parld/prompts.hpp"

#include <sstream>

#include "parld/json_codec.hpp"

namespace parld {

std::string to_string(TemplateId id) {
    switch (id) {
        case TemplateId::Previewer: return "previewer";
        case TemplateId::Analyzer: return "analyzer";
        case TemplateId::Reasoner: return "reasoner";
        case TemplateId::Reflector: return "reflector";
        case TemplateId::TutorInstructionParld: return "tutor_instruction_parld";
        case TemplateId::TutorInstructionDa: return "tutor_instruction_da";
        case TemplateId::TutorDirectRespond: return "tutor_direct_respond";
        case TemplateId::SimulatedStudent: return "simulated_student";
        case TemplateId::CorrectnessJudge: return "correctness_judge";
        case TemplateId::KcTagger: return "kc_tagger";
    }
    return "unknown";
}

std::optional<TemplateId> template_id_from_string(std::string_view text) {
    static const std::map<std::string, TemplateId, std::less<>> ids = {
        {"previewer", TemplateId::Previewer},
        {"analyzer", TemplateId::Analyzer},
        {"reasoner", TemplateId::Reasoner},
        {"reflector", TemplateId::Reflector},
        {"tutor_instruction_parld", TemplateId::TutorInstructionParld},
        {"tutor_instruction_da", TemplateId::TutorInstructionDa},
        {"tutor_direct_respond", TemplateId::TutorDirectRespond},
        {"simulated_student", TemplateId::SimulatedStudent},
        {"correctness_judge", TemplateId::CorrectnessJudge},
        {"kc_tagger", TemplateId::KcTagger},
    };
    auto it = ids.find(text);
    if (it == ids.end()) return std::nullopt;
    return it->second;
}

namespace {

// Replaces {{name}} markers; unknown markers are left in place so the caller
// can flag them.
std::string substitute(const std::string& text, const SlotMap& slots) {
    std::string out;
    out.reserve(text.size());
    size_t pos = 0;
    while (pos < text.size()) {
        size_t open = text.find("{{", pos);
        if (open == std::string::npos) {
            out.append(text, pos, std::string::npos);
            break;
        }
        size_t close = text.find("}}", open + 2);
        if (close == std::string::npos) {
            out.append(text, pos, std::string::npos);
            break;
        }
        out.append(text, pos, open - pos);
        std::string name = text.substr(open + 2, close - open - 2);
        auto it = slots.find(name);
        if (it != slots.end()) {
            out.append(it->second);
        } else {
            out.append(text, open, close + 2 - open);
        }
        pos = close + 2;
    }
    return out;
}

bool has_marker(const std::string& text, std::string* name) {
    size_t open = text.find("{{");
    if (open == std::string::npos) return false;
    size_t close = text.find("}}", open + 2);
    if (close == std::string::npos) return false;
    if (name) *name = text.substr(open + 2, close - open - 2);
    return true;
}

}  // namespace

void PromptRegistry::put(PromptTemplate t) {
    templates_[t.id] = std::move(t);
}

const PromptTemplate& PromptRegistry::get(TemplateId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error("unknown template id '" + to_string(id) + "'");
    return it->second;
}

std::vector<ChatMessage> PromptRegistry::render(TemplateId id, const SlotMap& slots) const {
    const PromptTemplate& t = get(id);
    for (const auto& slot : t.required_slots) {
        if (!slots.count(slot))
            throw Error("template '" + to_string(id) + "': missing slot '" + slot + "'");
    }
    std::string system_text = substitute(t.system_text, slots);
    std::string user_text = substitute(t.user_text, slots);
    std::string leftover;
    if (has_marker(system_text, &leftover) || has_marker(user_text, &leftover))
        throw Error("template '" + to_string(id) + "': unbound slot marker '" + leftover + "'");
    return {{Role::System, system_text}, {Role::User, user_text}};
}

std::map<std::string, std::string> PromptRegistry::versions() const {
    std::map<std::string, std::string> out;
    for (const auto& [id, t] : templates_) out[to_string(id)] = t.version;
    return out;
}

PromptTemplate parse_prompt_asset(const std::string& content, const std::string& origin) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "---")
        throw Error(origin + ": prompt asset must start with '---' front matter");
    PromptTemplate t;
    bool has_id = false;
    while (std::getline(in, line)) {
        if (trim(line) == "---") break;
        size_t colon = line.find(':');
        if (colon == std::string::npos) throw Error(origin + ": bad front-matter line: " + line);
        std::string key = trim(line.substr(0, colon));
        std::string value = trim(line.substr(colon + 1));
        if (key == "id") {
            auto id = template_id_from_string(value);
            if (!id) throw Error(origin + ": unknown template id '" + value + "'");
            t.id = *id;
            has_id = true;
        } else if (key == "version") {
            t.version = value;
        } else if (key == "required_slots") {
            std::istringstream slots(value);
            std::string slot;
            while (std::getline(slots, slot, ',')) {
                slot = trim(slot);
                if (!slot.empty()) t.required_slots.push_back(slot);
            }
        } else {
            throw Error(origin + ": unknown front-matter key '" + key + "'");
        }
    }
    if (!has_id) throw Error(origin + ": front matter missing 'id'");
    if (t.version.empty()) throw Error(origin + ": front matter missing 'version'");

    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string sys_tag = "<<<SYSTEM>>>\n";
    const std::string user_tag = "<<<USER>>>\n";
    size_t sys_at = rest.find(sys_tag);
    size_t user_at = rest.find(user_tag);
    if (sys_at == std::string::npos || user_at == std::string::npos || user_at < sys_at)
        throw Error(origin + ": body must contain <<<SYSTEM>>> then <<<USER>>> sections");
    t.system_text = trim(rest.substr(sys_at + sys_tag.size(), user_at - sys_at - sys_tag.size()));
    t.user_text = trim(rest.substr(user_at + user_tag.size()));
    return t;
}

PromptRegistry PromptRegistry::load_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error("prompt directory not found: " + dir.string());
    PromptRegistry registry = builtin();
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".prompt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        registry.put(parse_prompt_asset(read_file(file), file.string()));
    }
    return registry;
}

}  // namespace parld
