#ifndef DIALQA_ERRORS_HPP
#define DIALQA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dialqa {

// Every library failure derives from Error so the CLI can report a stable
// machine-readable kind alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DIALQA_DEFINE_ERROR(Name, tag) \
  class Name : public Error {          \
   public:                             \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

DIALQA_DEFINE_ERROR(DimensionError, "dimension")
DIALQA_DEFINE_ERROR(ConfigError, "config")
DIALQA_DEFINE_ERROR(IndexError, "index")
DIALQA_DEFINE_ERROR(RangeError, "range")
DIALQA_DEFINE_ERROR(DeterminismError, "determinism")
DIALQA_DEFINE_ERROR(InputError, "input")
DIALQA_DEFINE_ERROR(ParseError, "parse")
DIALQA_DEFINE_ERROR(ValidationError, "validation")
DIALQA_DEFINE_ERROR(CapacityError, "capacity")
DIALQA_DEFINE_ERROR(AlignmentError, "alignment")
DIALQA_DEFINE_ERROR(SequencingError, "sequencing")
DIALQA_DEFINE_ERROR(IncompatibilityError, "incompatibility")
DIALQA_DEFINE_ERROR(StageError, "stage")
DIALQA_DEFINE_ERROR(CheckpointError, "checkpoint")

#undef DIALQA_DEFINE_ERROR

}  // namespace dialqa

#endif  // DIALQA_ERRORS_HPP
