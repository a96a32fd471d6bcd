// Copyright 2026 The UniME Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Append-only training metrics log: metrics.csv with columns step,loss,lr.
// Each row is flushed immediately so an aborted run leaves a valid file.

#ifndef UNIME_METRICS_HPP_
#define UNIME_METRICS_HPP_

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "unime/errors.hpp"

namespace unime {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path,
                         const std::string& header = "step,loss,lr") {
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path, ec) ||
                       std::filesystem::file_size(path, ec) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw DataError("cannot open metrics log: " + path.string());
    if (fresh) out_ << header << "\n";
    out_.flush();
  }

  void append(int64_t step, double loss, double lr) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g",
                  (long long)step, loss, lr);
    out_ << buf << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace unime

#endif  // UNIME_METRICS_HPP_
