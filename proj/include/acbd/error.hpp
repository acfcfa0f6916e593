#pragma once

#include <stdexcept>
#include <string>

namespace acbd {

enum class Errc {
  idx_bad_magic,
  idx_truncated,
  idx_count_mismatch,
  io_failure,
  bad_argument,
  bad_mapping,
  bad_split,
  modality_mismatch,
  insufficient_source,
  width_mismatch,
  divergence,
  rank_deficient,
  empty_cluster,
  misaligned_mask,
  empty_vocabulary,
  nothing_to_repair,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace acbd
