#include <malloc.h>

#include <string>
#include <vector>

#include "xlg/commands.hpp"

int main(int argc, char** argv) {
  // Tape buffers are large and short-lived; keep them in the heap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return xlg::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
