/**
 * @file model_backend.hpp
 * @brief The boundary to the vision-language model: embeddings, generation
 *        with per-token probabilities, sufficiency probes and judging.
 */
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fineprint/embedding_math.hpp"
#include "fineprint/vector_index.hpp"

namespace fineprint {

enum class PromptRole {
  answer,
  sufficiency_probe,
  salient_extract,
  fineprint_mine,
  decouple,
  summarize,
  judge_score,
};

std::string_view to_string(PromptRole role);
PromptRole parse_prompt_role(std::string_view s);

// A document as the model sees it. `text` and `image` come from record
// metadata ("text" or "snippet", and "image"); either may be empty.
struct DocRef {
  std::string pool;
  std::string doc_id;
  std::string text;
  std::string image;

  friend bool operator==(const DocRef&, const DocRef&) = default;
};

DocRef doc_ref_from(const DocumentRecord& record);

struct GenerationRequest {
  PromptRole role = PromptRole::answer;
  std::string query;
  std::vector<DocRef> context_docs;
  // Salient knowledge for the fine-print and fusion roles.
  std::optional<std::string> salient;
  // Previous-step knowledge: the last decoupled details when mining, the
  // newly mined details when decoupling, the knowledge under test for a
  // knowledge-only probe, the fine-print details when fusing.
  std::optional<std::string> prior;
  // Judge inputs.
  std::optional<std::string> prediction;
  std::optional<std::string> gold;
  // Decoupler step (1-based) or judge retry index; 0 otherwise.
  int iteration = 0;
  int max_tokens = 512;
};

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason r);
FinishReason parse_finish_reason(std::string_view s);

struct GenerationResult {
  std::string text;
  // Probability of each emitted token, each in (0, 1].
  std::vector<double> token_probs;
  FinishReason finish_reason = FinishReason::stop;
};

struct SufficiencyVerdict {
  bool sufficient = false;
  std::string rationale;
};

// Roles that read documents need at least one; knowledge-only roles need the
// knowledge they operate on. Throws PreconditionViolation.
void validate_request(const GenerationRequest& req);

// Throws ProbabilityOutOfRange if any token probability is outside (0, 1].
void validate_result(const GenerationResult& result);

// The first word of the reply must be yes or no (case-insensitive); anything
// after it becomes the rationale. Throws UnparseableVerdict otherwise.
SufficiencyVerdict parse_verdict(std::string_view text);

// Versioned template text shipped in prompts/.
std::string_view prompt_template(PromptRole role);
std::string_view system_prompt();
std::string render_prompt(const GenerationRequest& req);

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual Embedding embed_query(const std::string& query) = 0;
  virtual Embedding embed_document(const DocRef& doc) = 0;
  virtual GenerationResult generate(const GenerationRequest& req) = 0;
};

// Asks whether `docs` suffice to answer `query`.
SufficiencyVerdict sufficiency_probe(ModelBackend& backend, const std::string& query,
                                     std::span<const DocRef> docs);

// Same constrained probe with `knowledge` as the only context.
SufficiencyVerdict answerability_probe(ModelBackend& backend,
                                       const std::string& query,
                                       const std::string& knowledge, int iteration);

}  // namespace fineprint
