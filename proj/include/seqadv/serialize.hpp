#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqadv/defense.hpp"
#include "seqadv/evaluation.hpp"

namespace seqadv {

using Json = nlohmann::json;

// ---- files ----

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
std::uint64_t fnv1a_file(const std::string& path);
std::string hex64(std::uint64_t v);

// ---- named-tensor blobs ----

// Binary blob of (name, rows, cols, doubles) entries in parameter order.
void save_params(const std::string& path, const ParamList& params);
// Loads into an already-constructed model; every name and shape must match.
void load_params(const std::string& path, const ParamList& params);

// ---- model configs <-> JSON ----

Json to_json(const MlmConfig& cfg);
MlmConfig mlm_config_from_json(const Json& j);
Json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const Json& j);
Json to_json(const DeepLevConfig& cfg);
DeepLevConfig deeplev_config_from_json(const Json& j);

// ---- checkpoints: parameter blob + sidecar JSON manifest ----

struct CheckpointMeta {
  std::string model_kind;  // "mlm" | "classifier" | "deeplev"
  Json config;
  std::string vocab_hash;
  std::uint64_t seed = 0;
  Json metrics;
};

// The manifest lands next to the blob as <blob_path>.json.
void save_checkpoint(const std::string& blob_path, const ParamList& params,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint_meta(const std::string& blob_path);

MlmModel load_mlm_checkpoint(const std::string& blob_path);
Classifier load_classifier_checkpoint(const std::string& blob_path);
DeepLevModel load_deeplev_checkpoint(const std::string& blob_path);

// ---- histories, records, reports ----

std::string history_csv(const History& history);

std::string records_jsonl(const std::vector<AttackRecord>& records, const Vocabulary& vocab);
std::vector<AttackRecord> parse_records_jsonl(const std::string& text, const Vocabulary& vocab);

Json to_json(const MetricsReport& m);
Json to_json(const DefenseReport& r);

}  // namespace seqadv
