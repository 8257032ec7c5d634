#include "g2sqg/decoder.hpp"

#include "g2sqg/errors.hpp"

namespace g2s {

SampleMode parse_sample_mode(std::string_view s) {
  if (s == "greedy") return SampleMode::Greedy;
  if (s == "multinomial") return SampleMode::Multinomial;
  throw ConfigError("sample mode must be greedy or multinomial, got '" + std::string(s) + "'");
}

}  // namespace g2s
