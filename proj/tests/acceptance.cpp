// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any failure.
#include <cstdio>
#include <cstring>

#include "geoaddr/checks.hpp"

int main(int argc, char** argv) {
    bool overfit = true;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--skip-overfit") == 0) overfit = false;
    int failed = 0;
    for (const auto& r : geoaddr::checks::run_all(overfit)) {
        std::printf("%s %d %s: %s\n", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.detail.c_str());
        std::fflush(stdout);
        failed += !r.pass;
    }
    return failed ? 1 : 0;
}
