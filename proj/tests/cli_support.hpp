#pragma once

#include "dgforge/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#ifndef DGFORGE_CLI_PATH
#error "DGFORGE_CLI_PATH must point at the dgforge executable"
#endif

namespace dgtest {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI with `args` (already shell-quoted where needed); stdout and
/// stderr are captured through files in `scratch`.
inline CliRun run_cli(const std::string& args, const std::filesystem::path& scratch) {
    const auto out = scratch / "cli_stdout.txt";
    const auto err = scratch / "cli_stderr.txt";
    const std::string cmd = std::string("'") + DGFORGE_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = dgforge::io::read_file(out);
    r.err = dgforge::io::read_file(err);
    return r;
}

inline std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

} // namespace dgtest
