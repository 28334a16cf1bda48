#pragma once
// Shared test helpers: temp dirs, RNG fills, finite differences, subprocesses.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "facemae/common.hpp"

namespace tu {

struct TempDir {
    std::filesystem::path p;

    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto cand = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(cand, ec)) {
                p = cand;
                return;
            }
        }
        std::abort();
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(p, ec);
    }
    std::string file(const std::string& name) const { return (p / name).string(); }
};

inline std::vector<double> rand_image(int h, int w, int c, uint64_t seed) {
    std::vector<double> img(size_t(h) * w * c);
    fm::Rng rng(seed);
    for (auto& v : img) v = rng.uniform();
    return img;
}

// central difference d(loss)/d(slot)
template <class F>
double fd(F&& loss, double& slot, double h = 1e-4) {
    const double save = slot;
    slot = save + h;
    const double lp = loss();
    slot = save - h;
    const double lm = loss();
    slot = save;
    return (lp - lm) / (2 * h);
}

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

inline std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// run a shell command, capture exit code + stdout + stderr
inline CmdResult run_cmd(const std::string& cmd, const std::string& workdir) {
    const std::string out = workdir + "/.cmd_out";
    const std::string err = workdir + "/.cmd_err";
    const std::string full = "cd '" + workdir + "' && " + cmd + " >'" + out + "' 2>'" + err + "'";
    int rc = std::system(full.c_str());
    CmdResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// parse a csv body into rows of cells (no quoting; our writers never quote)
inline std::vector<std::vector<std::string>> parse_csv(const std::string& body) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream ss(body);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        cells.push_back(cur);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace tu
