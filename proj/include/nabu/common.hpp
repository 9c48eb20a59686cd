#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nabu {

#ifdef NABU_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

/// Error classes surfaced by the library. The CLI maps each to its own exit code.
enum class ErrorCode : int {
  Generic = 1,
  MalformedTriple = 10,
  EmptyGraph = 11,
  MissingLanguageData = 12,
  Config = 13,
  ConfigHashMismatch = 14,
  CorruptCheckpoint = 15,
  GenerationRefused = 16,
  LengthMismatch = 17,
  NonFiniteGradient = 18,
  ManifestMismatch = 19,
  Io = 20,
  ShapeMismatch = 21,
  IdOutOfRange = 22,
  MaskedAll = 23,
  CorpusTooSmall = 24,
  UnknownLanguage = 25,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class MalformedTriple : public Error {
 public:
  MalformedTriple(std::size_t line, const std::string& detail)
      : Error(ErrorCode::MalformedTriple, "malformed triple at line " + std::to_string(line) + ": " + detail),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define NABU_DEFINE_ERROR(Name)                                                  \
  class Name : public Error {                                                    \
   public:                                                                       \
    explicit Name(const std::string& what) : Error(ErrorCode::Name, what) {}     \
  };

NABU_DEFINE_ERROR(EmptyGraph)
NABU_DEFINE_ERROR(MissingLanguageData)
NABU_DEFINE_ERROR(ConfigHashMismatch)
NABU_DEFINE_ERROR(CorruptCheckpoint)
NABU_DEFINE_ERROR(GenerationRefused)
NABU_DEFINE_ERROR(LengthMismatch)
NABU_DEFINE_ERROR(NonFiniteGradient)
NABU_DEFINE_ERROR(ManifestMismatch)
NABU_DEFINE_ERROR(ShapeMismatch)
NABU_DEFINE_ERROR(IdOutOfRange)
NABU_DEFINE_ERROR(MaskedAll)
NABU_DEFINE_ERROR(CorpusTooSmall)
NABU_DEFINE_ERROR(UnknownLanguage)

#undef NABU_DEFINE_ERROR

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::Io, what) {}
};

/// 64-bit FNV-1a, used for config hashes, file hashes and checkpoint checksums.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace nabu
