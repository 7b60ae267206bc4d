#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace criticloop {

enum class TemplateErrc {
  LoadFailed,
  ChecksumMismatch,
  UnknownPlaceholder,
  MissingBinding,
  UnusedBinding,
  UnknownTemplate,
};

class TemplateError : public std::runtime_error {
 public:
  TemplateError(TemplateErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  TemplateErrc code() const { return code_; }

 private:
  TemplateErrc code_;
};

// A prompt template as shipped on disk. placeholders lists the known
// placeholder names that actually occur in the body, in order of first
// appearance. Literal braces elsewhere in the body (e.g. \boxed{}) are plain
// text; only the five known names are ever substituted.
struct Template {
  std::string name;
  std::string body;
  std::vector<std::string> placeholders;
};

// Where each binding landed in the rendered text, for the round-trip and
// injectivity properties.
struct RenderSpan {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct RenderedPrompt {
  std::string text;
  std::vector<RenderSpan> spans;
};

using Bindings = std::map<std::string, std::string>;

// Substitutes bindings into the template. Every placeholder in the body must
// be bound (MissingBinding) and every binding must be used (UnusedBinding,
// catching, say, a reference solution passed to a hint-free template).
RenderedPrompt render_traced(const Template& tmpl, const Bindings& bindings);
std::string render(const Template& tmpl, const Bindings& bindings);

// The seven shipped templates, loaded from a directory and verified against
// digests pinned at build time. Any byte drift in a template file is a
// ChecksumMismatch at load, not a subtle prompt change at runtime.
class TemplateSet {
 public:
  static TemplateSet load(const std::string& dir);

  const Template& get(std::string_view name) const;

  // name -> expected SHA-256, the pinned shipping set.
  static const std::map<std::string, std::string>& expected_digests();

 private:
  std::map<std::string, Template, std::less<>> templates_;
};

// Resolution order: $CRITICLOOP_TEMPLATES, the source-tree directory baked in
// at build time, then "./templates".
std::string default_template_dir();

}  // namespace criticloop
