#pragma once

#include <string>
#include <vector>

#include "g2sqg/corpus.hpp"

namespace g2s::testing {

/// One-sentence example whose tokens all attach to the first one.
inline PassageExample make_example(std::string id, std::vector<std::string> passage, std::vector<std::string> answer,
                                   std::vector<std::string> question = {}) {
  PassageExample ex;
  ex.id = std::move(id);
  const auto n = passage.size();
  ex.passage_tokens = std::move(passage);
  ex.answer_tokens = std::move(answer);
  ex.question_tokens = std::move(question);
  ex.pos.assign(n, "X");
  ex.ner.assign(n, "O");
  ex.dep_head.assign(n, 0);
  if (n > 0) ex.dep_head[0] = -1;
  ex.sent_bounds = {{0, static_cast<int>(n)}};
  for (const auto& t : ex.passage_tokens) ex.case_classes.push_back(case_class(t));
  return ex;
}

inline std::string data_path(const std::string& relative) { return std::string(G2S_DATA_DIR) + "/" + relative; }

}  // namespace g2s::testing
