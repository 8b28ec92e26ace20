#pragma once

#include <stdexcept>
#include <string>

namespace pchmm {

/// Base error carrying a stable machine-readable code in addition to the
/// human-readable message. The CLI maps codes into its error JSON verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct ZeroVarianceColumn : Error {
    explicit ZeroVarianceColumn(int column)
        : Error("ZERO_VARIANCE_COLUMN",
                "covariate column " + std::to_string(column) + " is constant"),
          column(column) {}
    int column;
};

struct TooFewEvents : Error {
    TooFewEvents(long events, int intervals)
        : Error("TOO_FEW_EVENTS",
                "need at least " + std::to_string(intervals) + " events to build " +
                    std::to_string(intervals) + " intervals, have " + std::to_string(events)) {}
};

struct DegenerateQuantiles : Error {
    explicit DegenerateQuantiles(const std::string& what)
        : Error("DEGENERATE_QUANTILES", what) {}
};

struct InvalidPair : Error {
    explicit InvalidPair(const std::string& what) : Error("INVALID_PAIR", what) {}
};

struct InvalidParameter : Error {
    explicit InvalidParameter(const std::string& what) : Error("INVALID_PARAMETER", what) {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& what) : Error("DIMENSION_MISMATCH", what) {}
};

struct NonFiniteLogPosterior : Error {
    NonFiniteLogPosterior()
        : Error("NON_FINITE_LOG_POSTERIOR", "log posterior is not finite at the chain state") {}
};

struct NonFiniteObjective : Error {
    NonFiniteObjective()
        : Error("NON_FINITE_OBJECTIVE", "objective is not finite at the current parameters") {}
};

struct StepSizeUnderflow : Error {
    explicit StepSizeUnderflow(double step)
        : Error("STEP_SIZE_UNDERFLOW",
                "line-search step size underflowed (" + std::to_string(step) + " < 1e-10)") {}
};

struct DegenerateGradient : Error {
    explicit DegenerateGradient(const std::string& what)
        : Error("DEGENERATE_GRADIENT", what) {}
};

struct RankDeficient : Error {
    explicit RankDeficient(const std::string& what) : Error("RANK_DEFICIENT", what) {}
};

struct GroupTooSmall : Error {
    explicit GroupTooSmall(int group)
        : Error("GROUP_TOO_SMALL",
                "group " + std::to_string(group) + " has no observed events"),
          group(group) {}
    int group;
};

struct NoComparablePairs : Error {
    NoComparablePairs()
        : Error("NO_COMPARABLE_PAIRS", "no usable pairs for concordance computation") {}
};

struct DataSchemaError : Error {
    explicit DataSchemaError(const std::string& what) : Error("DATA_SCHEMA", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("IO_ERROR", what) {}
};

}  // namespace pchmm
