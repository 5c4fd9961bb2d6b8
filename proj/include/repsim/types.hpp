#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace repsim {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrixd = Matrix<double>;
using Vectord = Vector<double>;

// Activation payloads are float32 row-major, mirroring the on-disk layout.
using StorageMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class errc {
  missing_file,
  bad_magic,
  bad_manifest,
  shape_mismatch,
  non_finite_data,
  degenerate_input,
  numerical_failure,
  mismatched_rows,
  mismatched_datasets,
  unknown_language,
  unknown_layer,
  k_too_large,
  constant_vector,
  isolated_node,
  disconnected_graph,
  invalid_spec,
  invalid_argument,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace repsim
