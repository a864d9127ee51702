#pragma once

#include <string>
#include <vector>

namespace mappo {

/// One named entry of the binary checkpoint container.
struct CheckpointRecord {
  enum Type : std::uint8_t { F64Array = 0, I64 = 1, String = 2 };
  std::string name;
  Type type = F64Array;
  std::vector<double> f64;
  long i64 = 0;
  std::string str;
};

void write_checkpoint_records(const std::string& path,
                              const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint_records(const std::string& path);

/// The training config text stored inside a checkpoint.
std::string checkpoint_config_text(const std::string& path);

}  // namespace mappo
