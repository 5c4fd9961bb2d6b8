#pragma once

// Shared test utilities: scratch directories, subprocess runs of the CLI,
// and error-code capture.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "repsim/types.hpp"

namespace repsim::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            ("repsim_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  inline static int counter_ = 0;
  fs::path path_;
};

inline std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

// Runs the CLI with the given args, cwd, and stdout/stderr capture files.
// Returns the exit status.
inline int run_cli(const std::string& cli, const std::vector<std::string>& args,
                   const fs::path& cwd, const fs::path& out_file, const fs::path& err_file) {
  std::ostringstream cmd;
  cmd << "cd " << shell_quote(cwd.string()) << " && " << shell_quote(cli);
  for (const auto& a : args) cmd << ' ' << shell_quote(a);
  cmd << " > " << shell_quote(out_file.string()) << " 2> " << shell_quote(err_file.string());
  const int status = std::system(cmd.str().c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return buffer.str();
}

template <typename F>
errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a repsim::Error, none was thrown");
}

}  // namespace repsim::testing
