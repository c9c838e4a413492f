#pragma once

#include <stdexcept>
#include <string>

namespace bsn {

enum class Errc {
  CycleDetected,
  ShapeMismatch,
  DisconnectedLayer,
  MultipleSinks,
  InvalidGraph,
  NotConnected,
  EmptyTape,
  TooLarge,
  TooLargeForBruteForce,
  InvalidConfig,
  EmptyInput,
  ParseError,
  Io,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DisconnectedLayer: return "DisconnectedLayer";
    case Errc::MultipleSinks: return "MultipleSinks";
    case Errc::InvalidGraph: return "InvalidGraph";
    case Errc::NotConnected: return "NotConnected";
    case Errc::EmptyTape: return "EmptyTape";
    case Errc::TooLarge: return "TooLarge";
    case Errc::TooLargeForBruteForce: return "TooLargeForBruteForce";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ParseError: return "ParseError";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace bsn
