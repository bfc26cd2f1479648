#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mixode/common.hpp"

namespace mixode {

// Observation series for one component of one subject. Times are strictly
// increasing; gaps (missing measurements) are simply absent entries.
struct Series {
  Vector times;
  Vector values;
  int size() const { return static_cast<int>(times.size()); }
};

struct SubjectRecord {
  std::string id;
  std::optional<double> dose;
  std::vector<Series> series;  // one per component; may be empty

  // union of this subject's observation times across components
  Vector all_times() const;
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  int n_components = 0;

  void validate() const;
  // union of observation times across all subjects and components
  Vector all_times() const;
};

// CSV schema: header `subject_id,component,time,value`; missing observations
// are absent rows. Component is a 0-based index.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& data, const std::string& path);

// Covariates CSV schema: header `subject_id,dose`.
void read_covariates_csv(Dataset& data, const std::string& path);
void write_covariates_csv(const Dataset& data, const std::string& path);

}  // namespace mixode
