#pragma once

#include "ridnoise/dataset.hpp"
#include "ridnoise/errors.hpp"
#include "ridnoise/evaluation.hpp"
#include "ridnoise/flow.hpp"
#include "ridnoise/neural.hpp"
#include "ridnoise/robust_weights.hpp"
#include "ridnoise/task_spec.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ridnoise {

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// Thrown for unreadable or unwritable files and malformed documents.
class IoError : public DataError {
public:
    using DataError::DataError;
};

// JSON conversions. Readers accept partial objects: absent keys keep the
// value already held by the output argument, so a document can override a
// subset of the defaults.
json to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json to_json(const AdamConfig& c);
void update_from_json(const json& j, AdamConfig& c);
json to_json(const TrainConfig& c);
void update_from_json(const json& j, TrainConfig& c);
json to_json(const WeightConfig& c);
void update_from_json(const json& j, WeightConfig& c);
json to_json(const FlowArchitecture& c);
void update_from_json(const json& j, FlowArchitecture& c);
json to_json(const WnllConfig& c);
void update_from_json(const json& j, WnllConfig& c);
json to_json(const EvalConfig& c);
void update_from_json(const json& j, EvalConfig& c);
json to_json(const TaskSpec& t);
json to_json(const NoiseSpec& n);
void update_from_json(const json& j, NoiseSpec& n);
json to_json(const Provenance& p);
Provenance provenance_from_json(const json& j);

json to_json(const MlpParams& p);
MlpParams mlp_from_json(const json& j);
json to_json(const FlowModel& m);
FlowModel flow_from_json(const json& j);

json to_json(const EvalReport& r);

// 64-bit FNV-1a of a byte string, as 16 lowercase hex digits.
std::string checksum_hex(std::string_view bytes);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const json& j);
std::vector<json> read_jsonl(const std::filesystem::path& path);

// One {"x": [...], "y": [...]} object per line.
std::string dataset_to_jsonl(const Dataset& d);
// Sidecar next to a .jsonl file: name.jsonl -> name.meta.json.
std::filesystem::path meta_path(const std::filesystem::path& jsonl);

struct DatasetFiles {
    std::string checksum;  // of the .jsonl bytes
};
DatasetFiles write_dataset(const std::filesystem::path& jsonl, const Dataset& d);
// Reads the rows and, when present, the sidecar's provenance.
Dataset read_dataset(const std::filesystem::path& jsonl);

// Rows of "y" (or "target") from any JSON-lines file.
Matrix read_targets(const std::filesystem::path& jsonl);

}  // namespace ridnoise
