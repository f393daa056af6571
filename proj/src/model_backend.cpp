#include "fineprint/model_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "fineprint/error.hpp"
#include "prompt_templates.hpp"

namespace fineprint {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool reads_documents(PromptRole role) {
  return role == PromptRole::answer || role == PromptRole::salient_extract;
}

std::string render_documents(std::span<const DocRef> docs) {
  if (docs.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& d = docs[i];
    if (i) out += "\n";
    out += "[" + std::to_string(i + 1) + "] " + d.pool + "/" + d.doc_id;
    if (!d.text.empty()) out += ": " + d.text;
    if (!d.image.empty()) out += " (page image attached)";
  }
  return out;
}

// Single pass over "{{name}}" placeholders, so substituted text is never
// rescanned.
std::string fill(std::string_view tpl,
                 const std::vector<std::pair<std::string_view, std::string>>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const std::size_t open = tpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const std::size_t close = tpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tpl.substr(pos, open - pos));
    const std::string_view name = tpl.substr(open + 2, close - open - 2);
    auto it = std::find_if(values.begin(), values.end(),
                           [&](const auto& kv) { return kv.first == name; });
    if (it != values.end()) {
      out += it->second;
    } else {
      out.append(tpl.substr(open, close + 2 - open));
    }
    pos = close + 2;
  }
  out.append(tpl.substr(pos));
  return out;
}

}  // namespace

std::string_view to_string(PromptRole role) {
  switch (role) {
    case PromptRole::answer: return "answer";
    case PromptRole::sufficiency_probe: return "sufficiency_probe";
    case PromptRole::salient_extract: return "salient_extract";
    case PromptRole::fineprint_mine: return "fineprint_mine";
    case PromptRole::decouple: return "decouple";
    case PromptRole::summarize: return "summarize";
    case PromptRole::judge_score: return "judge_score";
  }
  return "answer";
}

PromptRole parse_prompt_role(std::string_view s) {
  for (auto r : {PromptRole::answer, PromptRole::sufficiency_probe,
                 PromptRole::salient_extract, PromptRole::fineprint_mine,
                 PromptRole::decouple, PromptRole::summarize, PromptRole::judge_score}) {
    if (to_string(r) == s) return r;
  }
  throw Error(ErrorCode::parse_error, "unknown prompt role \"" + std::string(s) + "\"");
}

std::string_view to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "stop";
}

FinishReason parse_finish_reason(std::string_view s) {
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  return FinishReason::stop;
}

DocRef doc_ref_from(const DocumentRecord& record) {
  DocRef d{record.pool_name, record.doc_id, {}, {}};
  const auto& md = record.metadata;
  if (md.is_object()) {
    if (auto it = md.find("text"); it != md.end() && it->is_string()) {
      d.text = it->get<std::string>();
    } else if (auto sn = md.find("snippet"); sn != md.end() && sn->is_string()) {
      d.text = sn->get<std::string>();
    }
    if (auto im = md.find("image"); im != md.end() && im->is_string()) {
      d.image = im->get<std::string>();
    }
  }
  return d;
}

void validate_request(const GenerationRequest& req) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::precondition_violation,
                std::string(to_string(req.role)) + " request: " + why);
  };
  if (req.query.empty()) fail("query is empty");
  if (req.max_tokens < 1) fail("max_tokens must be positive");
  if (reads_documents(req.role) && req.context_docs.empty()) fail("no context documents");
  switch (req.role) {
    case PromptRole::sufficiency_probe:
      if (req.context_docs.empty() && !req.prior) fail("nothing to assess");
      break;
    case PromptRole::fineprint_mine:
    case PromptRole::decouple:
      if (!req.salient || req.salient->empty()) fail("salient knowledge is required");
      if (req.role == PromptRole::decouple && !req.prior) fail("mined details are required");
      break;
    case PromptRole::summarize:
      if (req.context_docs.empty() && !req.salient) fail("no material to summarize");
      break;
    case PromptRole::judge_score:
      if (!req.prediction || !req.gold) fail("prediction and gold answer are required");
      break;
    default:
      break;
  }
}

void validate_result(const GenerationResult& result) {
  for (std::size_t i = 0; i < result.token_probs.size(); ++i) {
    const double p = result.token_probs[i];
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::probability_out_of_range,
                  "token " + std::to_string(i) + " has probability " + std::to_string(p));
    }
  }
}

SufficiencyVerdict parse_verdict(std::string_view text) {
  auto alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };

  // Leading whitespace and markup such as quotes or asterisks.
  std::size_t i = 0;
  while (i < text.size() && !alnum(text[i]) &&
         static_cast<unsigned char>(text[i]) < 0x80) {
    ++i;
  }
  std::size_t j = i;
  while (j < text.size() && alpha(text[j])) ++j;
  const std::string word = lower(text.substr(i, j - i));

  SufficiencyVerdict v;
  if (word == "yes") {
    v.sufficient = true;
  } else if (word != "no") {
    throw Error(ErrorCode::unparseable_verdict,
                "expected YES or NO, got \"" + std::string(text.substr(0, 80)) + "\"");
  }

  // Rationale: the rest of the reply after separators (spaces, punctuation,
  // dashes in either ASCII or UTF-8).
  static constexpr std::string_view kDashes[] = {"\xE2\x80\x94", "\xE2\x80\x93"};
  std::string_view rest = text.substr(j);
  for (bool more = true; more && !rest.empty();) {
    more = false;
    const auto c = static_cast<unsigned char>(rest.front());
    if (std::isspace(c) || (std::ispunct(c) && c != '"' && c != '(')) {
      rest.remove_prefix(1);
      more = true;
      continue;
    }
    for (auto dash : kDashes) {
      if (rest.starts_with(dash)) {
        rest.remove_prefix(dash.size());
        more = true;
      }
    }
  }
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back()))) {
    rest.remove_suffix(1);
  }
  v.rationale = std::string(rest);
  return v;
}

std::string_view prompt_template(PromptRole role) {
  return detail::prompt_text(std::string(to_string(role)));
}

std::string_view system_prompt() { return detail::prompt_text("system"); }

std::string render_prompt(const GenerationRequest& req) {
  const std::string none = "(none)";
  const std::string docs = render_documents(req.context_docs);
  std::string context = req.context_docs.empty() ? std::string() : docs;
  if (req.prior) {
    if (!context.empty()) context += "\n\n";
    context += *req.prior;
  }
  if (context.empty()) context = none;
  return fill(prompt_template(req.role),
              {{"query", req.query},
               {"documents", docs},
               {"context", context},
               {"salient", req.salient.value_or(none)},
               {"prior", req.prior.value_or(none)},
               {"prediction", req.prediction.value_or(none)},
               {"gold", req.gold.value_or(none)}});
}

SufficiencyVerdict sufficiency_probe(ModelBackend& backend, const std::string& query,
                                     std::span<const DocRef> docs) {
  if (docs.empty()) {
    throw Error(ErrorCode::precondition_violation, "sufficiency probe needs documents");
  }
  GenerationRequest req;
  req.role = PromptRole::sufficiency_probe;
  req.query = query;
  req.context_docs.assign(docs.begin(), docs.end());
  req.max_tokens = 64;
  return parse_verdict(backend.generate(req).text);
}

SufficiencyVerdict answerability_probe(ModelBackend& backend,
                                       const std::string& query,
                                       const std::string& knowledge, int iteration) {
  GenerationRequest req;
  req.role = PromptRole::sufficiency_probe;
  req.query = query;
  req.prior = knowledge;
  req.iteration = iteration;
  req.max_tokens = 64;
  return parse_verdict(backend.generate(req).text);
}

}  // namespace fineprint
