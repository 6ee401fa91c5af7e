#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gopstream {

enum class Errc {
    BadMagic,
    TruncatedStream,
    CorruptStream,
    ZeroDimension,
    DimMismatch,
    NonDivisibleDims,
    OutOfBoundsVector,
    ValueOverflow,
    ValueOutOfRange,
    VectorExceedsRadius,
    MisalignedSource,
    OutOfBounds,
    ShapeMismatch,
    NonFiniteInput,
    NonFiniteValue,
    NonFiniteLoss,
    HeadsMismatch,
    TimeIndexOutOfRange,
    EmptySequence,
    UnknownMode,
    DegenerateTrajectory,
    SpriteOutOfCanvas,
    Precondition,
    Io,
};

constexpr std::string_view errc_name(Errc c) {
    switch (c) {
        case Errc::BadMagic: return "BadMagic";
        case Errc::TruncatedStream: return "TruncatedStream";
        case Errc::CorruptStream: return "CorruptStream";
        case Errc::ZeroDimension: return "ZeroDimension";
        case Errc::DimMismatch: return "DimMismatch";
        case Errc::NonDivisibleDims: return "NonDivisibleDims";
        case Errc::OutOfBoundsVector: return "OutOfBoundsVector";
        case Errc::ValueOverflow: return "ValueOverflow";
        case Errc::ValueOutOfRange: return "ValueOutOfRange";
        case Errc::VectorExceedsRadius: return "VectorExceedsRadius";
        case Errc::MisalignedSource: return "MisalignedSource";
        case Errc::OutOfBounds: return "OutOfBounds";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::NonFiniteInput: return "NonFiniteInput";
        case Errc::NonFiniteValue: return "NonFiniteValue";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::HeadsMismatch: return "HeadsMismatch";
        case Errc::TimeIndexOutOfRange: return "TimeIndexOutOfRange";
        case Errc::EmptySequence: return "EmptySequence";
        case Errc::UnknownMode: return "UnknownMode";
        case Errc::DegenerateTrajectory: return "DegenerateTrajectory";
        case Errc::SpriteOutOfCanvas: return "SpriteOutOfCanvas";
        case Errc::Precondition: return "Precondition";
        case Errc::Io: return "Io";
    }
    return "Unknown";
}

/// Library-wide exception. Stream parsers attach the byte offset at which
/// the problem was detected.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what, std::optional<std::size_t> offset = std::nullopt)
        : std::runtime_error(format(code, what, offset)), code_(code), offset_(offset) {}

    Errc code() const noexcept { return code_; }
    std::optional<std::size_t> offset() const noexcept { return offset_; }

private:
    static std::string format(Errc code, const std::string& what, std::optional<std::size_t> offset) {
        std::string s(errc_name(code));
        s += ": ";
        s += what;
        if (offset) {
            s += " (at byte offset " + std::to_string(*offset) + ")";
        }
        return s;
    }

    Errc code_;
    std::optional<std::size_t> offset_;
};

inline void require(bool cond, Errc code, const std::string& what) {
    if (!cond) {
        throw Error(code, what);
    }
}

}  // namespace gopstream
