#include "g2sqg/biggnn.hpp"

#include "g2sqg/errors.hpp"

namespace g2s {

DirectionOrder parse_direction_order(std::string_view s) {
  if (s == "in_out") return DirectionOrder::IncomingFirst;
  if (s == "out_in") return DirectionOrder::OutgoingFirst;
  throw ConfigError("gnn.direction_order must be in_out or out_in, got '" + std::string(s) + "'");
}

std::string_view direction_order_name(DirectionOrder order) {
  return order == DirectionOrder::IncomingFirst ? "in_out" : "out_in";
}

}  // namespace g2s
