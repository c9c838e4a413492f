// Runs every acceptance check and prints one PASS/FAIL line per criterion.
// Optional arguments restrict the run to the given check ids.

#include <iostream>

#include "bsn/acceptance.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> only(argv + 1, argv + argc);
  bool ok = true;
  for (const auto& r : bsn::run_acceptance(bsn::AcceptanceOptions{}, only)) {
    std::cout << bsn::format_result(r) << std::flush;
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}
