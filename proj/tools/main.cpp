// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
  std::puts("tpd: placeholder, subcommands land with the pipeline modules");
  return 0;
}
