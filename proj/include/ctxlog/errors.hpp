#pragma once

#include <stdexcept>
#include <string>

namespace ctxlog {

// Base of every error the library throws. `kind()` carries the stable error
// name so callers (and the CLI) can branch without RTTI.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define CTXLOG_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& what) : Error(#Name, what) {}         \
    }

// corpus
CTXLOG_DEFINE_ERROR(MalformedLine);
CTXLOG_DEFINE_ERROR(MissingSessionKey);
CTXLOG_DEFINE_ERROR(InsufficientData);
// synth
CTXLOG_DEFINE_ERROR(InvalidSpec);
// tokenizer
CTXLOG_DEFINE_ERROR(CorpusEmpty);
// encoder
CTXLOG_DEFINE_ERROR(ShapeMismatch);
CTXLOG_DEFINE_ERROR(IndexOutOfRange);
CTXLOG_DEFINE_ERROR(CorruptCheckpoint);
// training
CTXLOG_DEFINE_ERROR(DegenerateBatch);
CTXLOG_DEFINE_ERROR(NonFiniteLoss);
// scoring / detection / evaluation
CTXLOG_DEFINE_ERROR(EmptyReference);
CTXLOG_DEFINE_ERROR(LengthMismatch);
CTXLOG_DEFINE_ERROR(TooFewCalibrationSequences);
CTXLOG_DEFINE_ERROR(EmptyFeatureMask);
CTXLOG_DEFINE_ERROR(ZeroScore);
CTXLOG_DEFINE_ERROR(InvalidMagnitude);
// cli
CTXLOG_DEFINE_ERROR(ConfigInvalid);
CTXLOG_DEFINE_ERROR(IoError);

#undef CTXLOG_DEFINE_ERROR

} // namespace ctxlog
