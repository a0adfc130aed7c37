#pragma once

#include <stdexcept>
#include <string>

namespace st {

enum class Err {
  shape_mismatch,
  label_out_of_range,
  no_forward_state,
  length_mismatch,
  epoch_out_of_range,
  architecture_mismatch,
  corrupt_payload,
  no_such_layer,
  not_a_conv_activation,
  range_out_of_bounds,
  empty_class,
  same_class,
  too_few_classes,
  degenerate_cluster,
  non_positive_tau,
  non_positive_beta,
  insufficient_class_samples,
  rollback_without_checkpoint,
  too_many_classes,
  bad_kernel,
  malformed_file,
  io_failure,
  missing_reference_checkpoint,
  missing_logs,
  bad_config,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::shape_mismatch: return "ShapeMismatch";
    case Err::label_out_of_range: return "LabelOutOfRange";
    case Err::no_forward_state: return "NoForwardState";
    case Err::length_mismatch: return "LengthMismatch";
    case Err::epoch_out_of_range: return "EpochOutOfRange";
    case Err::architecture_mismatch: return "ArchitectureMismatch";
    case Err::corrupt_payload: return "CorruptPayload";
    case Err::no_such_layer: return "NoSuchLayer";
    case Err::not_a_conv_activation: return "NotAConvActivation";
    case Err::range_out_of_bounds: return "RangeOutOfBounds";
    case Err::empty_class: return "EmptyClass";
    case Err::same_class: return "SameClass";
    case Err::too_few_classes: return "TooFewClasses";
    case Err::degenerate_cluster: return "DegenerateCluster";
    case Err::non_positive_tau: return "NonPositiveTau";
    case Err::non_positive_beta: return "NonPositiveBeta";
    case Err::insufficient_class_samples: return "InsufficientClassSamples";
    case Err::rollback_without_checkpoint: return "RollbackWithoutCheckpoint";
    case Err::too_many_classes: return "TooManyClasses";
    case Err::bad_kernel: return "BadKernel";
    case Err::malformed_file: return "MalformedFile";
    case Err::io_failure: return "IoFailure";
    case Err::missing_reference_checkpoint: return "MissingReferenceCheckpoint";
    case Err::missing_logs: return "MissingLogs";
    case Err::bad_config: return "BadConfig";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Err code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace st
