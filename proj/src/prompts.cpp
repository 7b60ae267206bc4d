#include "criticloop/prompts.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <optional>

#include "criticloop/dataset.hpp"
#include "criticloop/sha256.hpp"

namespace criticloop {

namespace {

constexpr std::array<std::string_view, 5> kKnownPlaceholders = {
    "problem", "attempt", "reference_solution", "wrong_step_criticism", "critique_refinement"};

// Brace tokens that are literal text in the shipped bodies, not placeholders.
constexpr std::array<std::string_view, 2> kLiteralBraceTokens = {"", "answer"};

bool is_known_placeholder(std::string_view name) {
  for (auto k : kKnownPlaceholders)
    if (k == name) return true;
  return false;
}

// If body[pos] opens a "{word}" token of lowercase/underscore characters,
// returns the word; otherwise nullopt.
std::optional<std::string_view> brace_token(std::string_view body, std::size_t pos) {
  if (body[pos] != '{') return std::nullopt;
  std::size_t e = pos + 1;
  while (e < body.size() && ((body[e] >= 'a' && body[e] <= 'z') || body[e] == '_')) ++e;
  if (e >= body.size() || body[e] != '}') return std::nullopt;
  return body.substr(pos + 1, e - pos - 1);
}

std::vector<std::string> scan_placeholders(const std::string& name, const std::string& body) {
  std::vector<std::string> found;
  for (std::size_t i = 0; i < body.size(); ++i) {
    auto tok = brace_token(body, i);
    if (!tok) continue;
    if (is_known_placeholder(*tok)) {
      if (std::find(found.begin(), found.end(), std::string(*tok)) == found.end())
        found.emplace_back(*tok);
      i += tok->size() + 1;
    } else {
      bool literal = false;
      for (auto lit : kLiteralBraceTokens)
        if (lit == *tok) literal = true;
      if (!literal)
        throw TemplateError(TemplateErrc::UnknownPlaceholder,
                            name + ": unknown placeholder {" + std::string(*tok) + "}");
    }
  }
  return found;
}

}  // namespace

RenderedPrompt render_traced(const Template& tmpl, const Bindings& bindings) {
  for (const auto& [name, _] : bindings) {
    if (std::find(tmpl.placeholders.begin(), tmpl.placeholders.end(), name) == tmpl.placeholders.end())
      throw TemplateError(TemplateErrc::UnusedBinding,
                          tmpl.name + ": binding \"" + name + "\" has no placeholder");
  }
  for (const auto& p : tmpl.placeholders) {
    if (!bindings.count(p))
      throw TemplateError(TemplateErrc::MissingBinding, tmpl.name + ": no binding for {" + p + "}");
  }

  RenderedPrompt out;
  out.text.reserve(tmpl.body.size());
  const std::string& body = tmpl.body;
  for (std::size_t i = 0; i < body.size();) {
    auto tok = brace_token(body, i);
    if (tok && is_known_placeholder(*tok)) {
      const std::string& value = bindings.at(std::string(*tok));
      RenderSpan span;
      span.name = std::string(*tok);
      span.begin = out.text.size();
      out.text += value;
      span.end = out.text.size();
      out.spans.push_back(std::move(span));
      i += tok->size() + 2;
    } else {
      out.text += body[i];
      ++i;
    }
  }
  return out;
}

std::string render(const Template& tmpl, const Bindings& bindings) {
  return render_traced(tmpl, bindings).text;
}

const std::map<std::string, std::string>& TemplateSet::expected_digests() {
  static const std::map<std::string, std::string> digests = {
      {"solve", "403a51fcba23602d889fa15124d96c8a7fa55239aac0a73154ede80fd96e663a"},
      {"critic", "3e98d04f013fa9e62a2fc2f783d0e09599443aff47b0b6d758224fc8972c0668"},
      {"refine", "195c819359f94c1cb30bdbd9b654c41d864cc9e71ead353b60998ede03273afa"},
      {"gsm8k_collect", "a8bc9835a89b7429e5b4bc3ab6568dfa9a82a0e899ad6f04036bd0ed88968d27"},
      {"math_collect_incorrect", "b52769ef6786fa7dd3c3f3390208784aa867139fd4cefe6bde56171e20c74770"},
      {"math_collect_correct", "db8d7a1dc2f85b599b70af3e994d64b4be659160b3c846e2428c96d9991aafb1"},
      {"hint_removal", "2f3f22ef8447e1c684699e05eea9b17f6f9fd9806f50e82e8c66aceb49c076f9"},
  };
  return digests;
}

TemplateSet TemplateSet::load(const std::string& dir) {
  TemplateSet set;
  for (const auto& [name, digest] : expected_digests()) {
    std::string path = dir + "/" + name + ".txt";
    std::string body;
    try {
      body = read_file(path);
    } catch (const DatasetError& e) {
      throw TemplateError(TemplateErrc::LoadFailed, e.what());
    }
    std::string actual = sha256_hex(body);
    if (actual != digest)
      throw TemplateError(TemplateErrc::ChecksumMismatch,
                          path + ": digest " + actual + " does not match pinned " + digest);
    Template t;
    t.name = name;
    t.body = std::move(body);
    t.placeholders = scan_placeholders(name, t.body);
    set.templates_.emplace(name, std::move(t));
  }
  return set;
}

const Template& TemplateSet::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end())
    throw TemplateError(TemplateErrc::UnknownTemplate, "no template named " + std::string(name));
  return it->second;
}

std::string default_template_dir() {
  if (const char* env = std::getenv("CRITICLOOP_TEMPLATES")) return env;
#ifdef CRITICLOOP_SOURCE_TEMPLATE_DIR
  if (std::filesystem::exists(std::string(CRITICLOOP_SOURCE_TEMPLATE_DIR) + "/solve.txt"))
    return CRITICLOOP_SOURCE_TEMPLATE_DIR;
#endif
  return "templates";
}

}  // namespace criticloop
