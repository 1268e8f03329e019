#pragma once

#include <stdexcept>
#include <string>

namespace iid {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidValue : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateHistogram : Error { using Error::Error; };
struct InvalidLayout : Error { using Error::Error; };
struct UnknownInstruction : Error { using Error::Error; };
struct NeedsMultipleInstructions : Error { using Error::Error; };
struct ZeroInfluence : Error { using Error::Error; };
struct InvalidInstruction : Error { using Error::Error; };
struct InvalidScene : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct StepUnderflow : Error { using Error::Error; };
struct NotATensorFile : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct UnsupportedDtype : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// Mask fusion collapsed to a constant grid. Carries the 1-based instruction
// id, 0 when the instruction is unknown at the throw site.
struct DegenerateMask : Error {
    DegenerateMask(int instr, const std::string& msg) : Error(msg), instruction(instr) {}
    int instruction = 0;
};

}  // namespace iid
