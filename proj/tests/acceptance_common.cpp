#include "acceptance_common.hpp"

#include <cstdio>
#include <iostream>

namespace dpmix::acceptance {

void Report::record(const std::string& id, const std::string& what, bool pass,
                    const std::string& detail) {
  if (!pass) ++failures_;
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " " << what << ": " << detail << std::endl;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace dpmix::acceptance
