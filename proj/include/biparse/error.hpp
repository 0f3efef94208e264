#pragma once

#include <stdexcept>
#include <string>

namespace biparse {

// Error hierarchy. The CLI maps these to exit codes: usage/format/config
// errors exit 2, everything else exits 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / contract violations.
struct DimError : Error {
  using Error::Error;
};

// Bad configuration values (flags, config file, model hyperparameters).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input files (treebanks, vector files, checkpoints, configs).
struct FormatError : Error {
  using Error::Error;
};

// Corpus-level problems (misalignment, missing gold annotations).
struct DataError : Error {
  using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace biparse
