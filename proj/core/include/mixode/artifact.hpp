#pragma once

#include <string>

#include "mixode/fit.hpp"
#include "mixode/simulate.hpp"

namespace mixode {

// Fit artifact: the result plus everything needed to reproduce or extend it
// (config echo, inline dataset, config hash, schema version). Serialized as
// deterministic JSON so identical inputs give byte-identical files.
struct FitArtifact {
  FitConfig config;
  Dataset data;
  FitResult result;
};

FitConfig fit_config_from_json_file(const std::string& path);
FitConfig fit_config_from_json_text(const std::string& text);
std::string fit_config_to_json_text(const FitConfig& config);

SimProtocol protocol_from_json_file(const std::string& path);
// Fit settings embedded in a protocol file under "fit" (model and random
// effects are taken from the protocol itself).
FitConfig protocol_fit_config(const std::string& path);

void write_fit_artifact(const FitArtifact& artifact, const std::string& path);
FitArtifact read_fit_artifact(const std::string& path);

// FNV-1a fingerprint of the canonical config serialization.
std::string config_hash(const FitConfig& config);

}  // namespace mixode
