#pragma once

#include <stdexcept>
#include <string>

namespace safenet {

// Shape or channel-count disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument outside its admissible interval (frequencies, ranks, labels).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Violated precondition that is not a shape problem (eps <= 0, non-binary spikes, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Malformed input files. The message carries the path and, when known, the line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (non-finite loss and the like).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace safenet
