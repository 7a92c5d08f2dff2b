#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iclids {

enum class Errc {
    // dataset
    MissingFile,
    SchemaMismatch,
    EmptyDataset,
    NonNumericFeature,
    DimensionMismatch,
    UnknownClassName,
    InvalidSpec,
    // multimix
    ShapeMismatch,
    EmptyMixture,
    InvalidCount,
    // weak classifiers
    TooManyClassifiers,
    DegenerateTraining,
    InvalidAccuracy,
    // context builder
    EmptyClass,
    IncompatibleMode,
    ShotsOutOfRange,
    // transformer
    InvalidConfig,
    ModeMismatch,
    LengthExceeded,
    NonFiniteLoss,
    CorruptCheckpoint,
    VersionMismatch,
    // deployment planner
    InvalidRate,
    InvalidBatch,
    EmptyTable,
    // evaluation / cli
    MissingCell,
    ConfigInvalid,
    MissingArtifact,
    Internal,
};

std::string_view errc_name(Errc c);

// Process exit code for a given error class; documented in the README.
int errc_exit_code(Errc c);

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

  private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool ok, Errc code, const std::string& message) {
    if (!ok) {
        fail(code, message);
    }
}

}  // namespace iclids
